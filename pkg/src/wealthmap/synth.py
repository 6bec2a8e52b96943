"""Synthetic input-file generator for tests and demos.

Each country is a dense rectangular block of zoom-14 tiles on its own
longitude patch near the equator. A smooth latent wealth field drives
everything: tile features are linear mixes of the field and a few
independent smooth "landscape" fields (so features implicitly encode
location), households threshold the field into asset indicators, and
admin-unit truth files carry the per-country standardized field. The
``spatial_noise`` knob adds a smooth label component that features
cannot explain, which is what separates interleaved from spatially
blocked cross-validation.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from wealthmap import csvio
from wealthmap.csvio import Manifest
from wealthmap.ingest import ASSET_COLUMNS, FEATURE_COLUMNS, IMAGE_FEATURES, SCALAR_FEATURES
from wealthmap.tilegrid import ANALYSIS_ZOOM, LatLon, TileId, latlon_to_tile, quadkey, tile_center
from wealthmap.util import child_rng

from wealthmap import __version__

ADMIN_LEVELS = ("admin1", "admin2")
_ADMIN_SPLITS = {"admin1": 2, "admin2": 4}


@dataclass
class SynthConfig:
    countries: int = 3
    tiles: int = 400
    clusters: int = 120
    households_per_cluster: int = 6
    target_households: int = 300
    seed: int = 0
    feature_noise: float = 0.0
    label_noise: float = 0.0
    spatial_noise: float = 0.0
    household_noise: float = 0.0
    urban_share: float = 0.4
    jitter_scale: float = 1.0  # multiplies the 2 km urban / 5 km rural centroid jitter
    landscape_mix: float = 0.3  # landscape-field weight in every feature, vs ~1 for wealth
    population_mu: float = 4.0  # log-scale location of tile populations
    population_sigma: float = 1.5  # log-scale spread; also a noise source for the join


def _country_codes(n: int) -> list[str]:
    return [chr(ord("A") + i // 26) + chr(ord("A") + i % 26) for i in range(n)]


class _SmoothField:
    """Sum of a few low-frequency sinusoids over normalized block coordinates."""

    def __init__(self, rng, n_waves: int = 4, max_freq: float = 2.5):
        self.p = rng.uniform(0.5, max_freq, n_waves)
        self.q = rng.uniform(0.5, max_freq, n_waves)
        self.phase = rng.uniform(0.0, 2.0 * math.pi, n_waves)
        self.amp = 1.0 / np.arange(1, n_waves + 1)

    def __call__(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        out = np.zeros(np.broadcast(u, v).shape)
        for a, p, q, ph in zip(self.amp, self.p, self.q, self.phase):
            out = out + a * np.sin(2.0 * math.pi * (p * u + q * v) + ph)
        return out


@dataclass
class _Country:
    code: str
    x0: int
    y0: int
    width: int
    height: int
    tile_xy: list[tuple[int, int]]
    wealth: "_SmoothField"
    landscape: list["_SmoothField"]
    noise_field: "_SmoothField"
    offset: float

    def coords(self, x, y):
        u = (np.asarray(x) - self.x0) / self.width
        v = (np.asarray(y) - self.y0) / self.height
        return u, v

    def latent(self, x, y):
        u, v = self.coords(x, y)
        return self.wealth(u, v) + self.offset


def _build_country(code: str, index: int, config: SynthConfig) -> _Country:
    rng = child_rng(config.seed, "country", code)
    width = int(math.ceil(math.sqrt(config.tiles)))
    height = int(math.ceil(config.tiles / width))
    lon0 = -150.0 + 8.0 * index
    lat0 = -1.0
    origin = latlon_to_tile(LatLon(lat0, lon0), ANALYSIS_ZOOM)
    tile_xy = []
    for row in range(height):
        for col in range(width):
            if len(tile_xy) >= config.tiles:
                break
            tile_xy.append((origin.x + col, origin.y + row))
    # Wavelengths stay well above the survey jitter (~2 tiles): the wealth
    # field is the smoothest, the label-noise field the busiest so that
    # spatially blocked folds cannot see it from the training region.
    return _Country(
        code=code,
        x0=origin.x,
        y0=origin.y,
        width=width,
        height=height,
        tile_xy=tile_xy,
        wealth=_SmoothField(rng, max_freq=0.5),
        landscape=[_SmoothField(rng, max_freq=2.0) for _ in range(3)],
        noise_field=_SmoothField(rng, n_waves=4, max_freq=3.5),
        offset=float(rng.normal(0.0, 0.5)),
    )


def _tile_features(country: _Country, config: SynthConfig) -> np.ndarray:
    """(n_tiles, 112) raw feature matrix for one country's tiles."""
    rng = child_rng(config.seed, "features", country.code)
    xs = np.array([x for x, _ in country.tile_xy])
    ys = np.array([y for _, y in country.tile_xy])
    u, v = country.coords(xs, ys)
    latent = country.wealth(u, v)
    fields = np.stack([latent] + [g(u, v) for g in country.landscape])  # (4, n)
    n = len(xs)
    d = len(FEATURE_COLUMNS)
    # Wealth signal dominates every feature; the landscape fields leave a
    # weaker location fingerprint that spatial leakage tests rely on.
    mix = rng.normal(0.0, config.landscape_mix, size=(d, 4))
    mix[:, 0] = rng.uniform(0.6, 1.4, size=d) * rng.choice([-1.0, 1.0], size=d)
    raw = mix @ fields  # (d, n)
    if config.feature_noise > 0:
        raw = raw + config.feature_noise * rng.normal(size=raw.shape)
    scales = rng.uniform(0.5, 2.0, size=d)
    offsets = rng.normal(0.0, 2.0, size=d)
    raw = raw * scales[:, None] + offsets[:, None]
    out = np.empty((n, d))
    # Scalar features get plausible ranges; image components stay raw mixes.
    for j, name in enumerate(SCALAR_FEATURES):
        col = raw[j]
        if name == "road_density":
            out[:, j] = np.abs(col) * 0.001
        elif name == "urban_builtup":
            out[:, j] = (col > np.median(col)).astype(float)
        elif name == "elevation":
            out[:, j] = 80.0 * col
        elif name == "slope":
            out[:, j] = np.abs(col) * 0.01
        elif name == "precipitation":
            out[:, j] = 60.0 * col
        elif name == "population":
            out[:, j] = 0.0  # filled from the population table afterwards
        elif name == "radiance":
            out[:, j] = np.abs(col) * 2.0
        else:  # device and infrastructure counts
            out[:, j] = np.floor(np.abs(col) * 12.0)
    for k, name in enumerate(IMAGE_FEATURES):
        out[:, len(SCALAR_FEATURES) + k] = raw[len(SCALAR_FEATURES) + k]
    return out


def _tile_population(country: _Country, config: SynthConfig) -> np.ndarray:
    rng = child_rng(config.seed, "population", country.code)
    n = len(country.tile_xy)
    pop = np.exp(rng.normal(config.population_mu, config.population_sigma, size=n))
    pop[rng.random(n) < 0.1] = 0.0
    return np.round(pop, 1)


def _cluster_noise(country: _Country, config: SynthConfig, u, v, rng) -> np.ndarray:
    out = np.zeros(np.broadcast(np.asarray(u), np.asarray(v)).shape)
    if config.spatial_noise > 0:
        out = out + config.spatial_noise * country.noise_field(u, v)
    if config.label_noise > 0:
        out = out + config.label_noise * rng.normal(size=out.shape)
    return out


def synth_world(config: SynthConfig, outdir: str) -> dict[str, str]:
    """Write the full input-file set; returns {logical name: path}."""
    os.makedirs(outdir, exist_ok=True)
    codes = _country_codes(config.countries)
    countries = [_build_country(code, i, config) for i, code in enumerate(codes)]
    manifest = Manifest(version=__version__, seed=config.seed)
    paths: dict[str, str] = {}

    feature_rows = []
    population_rows = []
    tile_info: dict[str, dict] = {}  # quadkey -> country, lat, lon, latent, population
    populated_xy: dict[str, list[tuple[int, int]]] = {}
    for country in countries:
        feats = _tile_features(country, config)
        pops = _tile_population(country, config)
        xs = np.array([x for x, _ in country.tile_xy])
        ys = np.array([y for _, y in country.tile_xy])
        latents = country.latent(xs, ys)
        pop_col = FEATURE_COLUMNS.index("population")
        feats[:, pop_col] = pops
        populated_xy[country.code] = []
        for i, (x, y) in enumerate(country.tile_xy):
            if pops[i] <= 0.0:
                continue  # unpopulated land is outside the estimable domain
            t = TileId(ANALYSIS_ZOOM, x, y)
            qk = quadkey(t)
            c = tile_center(t)
            feature_rows.append([qk, country.code] + [float(v) for v in feats[i]])
            population_rows.append([qk, float(pops[i])])
            populated_xy[country.code].append((x, y))
            tile_info[qk] = {
                "country": country.code,
                "lat": c.lat,
                "lon": c.lon,
                "latent": float(latents[i]),
                "population": float(pops[i]),
                "x": x,
                "y": y,
            }
    paths["features"] = os.path.join(outdir, "features.csv")
    csvio.write_csv(paths["features"], ["quadkey", "country"] + FEATURE_COLUMNS, feature_rows, manifest)
    paths["population"] = os.path.join(outdir, "population.csv")
    csvio.write_csv(paths["population"], ["quadkey", "population"], population_rows, manifest)

    cluster_rows = []
    household_rows = []
    for country in countries:
        # Separate streams: the noise knobs must change labels without
        # moving cluster geometry.
        rng_geo = child_rng(config.seed, "clusters", country.code)
        rng_label = child_rng(config.seed, "cluster-labels", country.code)
        candidates = populated_xy[country.code]
        chosen = rng_geo.choice(len(candidates), size=min(config.clusters, len(candidates)), replace=False)
        # Asset thresholds at evenly spaced quantiles of the country's field.
        xs = np.array([x for x, _ in country.tile_xy])
        ys = np.array([y for _, y in country.tile_xy])
        field_values = country.latent(xs, ys)
        thresholds = np.quantile(field_values, [(j + 1) / (len(ASSET_COLUMNS) + 1) for j in range(len(ASSET_COLUMNS))])
        for ci, tile_idx in enumerate(sorted(int(i) for i in chosen)):
            x, y = candidates[tile_idx]
            center = tile_center(TileId(ANALYSIS_ZOOM, x, y))
            urban = bool(rng_geo.random() < config.urban_share)
            jitter_deg = config.jitter_scale * (2.0 if urban else 5.0) / 111.195
            lat = center.lat + float(rng_geo.uniform(-jitter_deg, jitter_deg))
            lon = center.lon + float(rng_geo.uniform(-jitter_deg, jitter_deg))
            cid = f"{country.code}-c{ci:04d}"
            cluster_rows.append([cid, country.code, lat, lon, 1 if urban else 0, "2018"])
            u, v = country.coords(x, y)
            base = float(country.latent(x, y) + _cluster_noise(country, config, u, v, rng_label))
            for hi in range(config.households_per_cluster):
                latent_hh = base + config.household_noise * float(rng_label.normal())
                assets = [1.0 if latent_hh > t else 0.0 for t in thresholds[:-1]]
                rooms = float(1 + int(np.searchsorted(thresholds, latent_hh)))
                assets.append(rooms)
                household_rows.append(
                    [f"{cid}-h{hi:02d}", country.code, cid, "", "", 1.0] + assets
                )
    paths["clusters"] = os.path.join(outdir, "clusters.csv")
    csvio.write_csv(
        paths["clusters"],
        ["cluster_id", "country", "lat", "lon", "urban", "survey_year"],
        cluster_rows, manifest,
    )
    paths["households"] = os.path.join(outdir, "households.csv")
    csvio.write_csv(
        paths["households"],
        ["household_id", "country", "cluster_id", "lat", "lon", "weight"] + ASSET_COLUMNS,
        household_rows, manifest,
    )

    stats_rows = []
    attr_rows = []
    continents = ("africa", "america", "asia", "europe")
    for i, country in enumerate(countries):
        rng = child_rng(config.seed, "stats", country.code)
        gdp = float(np.round(np.exp(rng.uniform(math.log(500.0), math.log(9000.0))), 2))
        gini = float(np.round(rng.uniform(0.30, 0.55), 3))
        stats_rows.append([country.code, gdp, "2018", gini, "2015"])
        total_pop = sum(
            info["population"] for info in tile_info.values() if info["country"] == country.code
        )
        area = len(country.tile_xy) * 2.4 * 2.4
        attr_rows.append([
            country.code, float(np.round(area, 1)), float(np.round(total_pop, 1)),
            1 if rng.random() < 0.2 else 0, 1 if rng.random() < 0.3 else 0,
            continents[i % len(continents)], float(config.countries - 1), 0.0,
        ])
    paths["country_stats"] = os.path.join(outdir, "country_stats.csv")
    csvio.write_csv(
        paths["country_stats"], ["iso2", "gdp_pc_usd", "gdp_year", "gini", "gini_year"],
        stats_rows, manifest,
    )
    paths["country_attributes"] = os.path.join(outdir, "country_attributes.csv")
    csvio.write_csv(
        paths["country_attributes"],
        ["iso2", "area_km2", "population", "island", "landlocked", "continent",
         "n_survey_neighbors", "dist_closest_survey_km"],
        attr_rows, manifest,
    )

    assignment_rows = []
    truth_rows = []
    for country in countries:
        xy = populated_xy[country.code]
        xs = np.array([x for x, _ in xy])
        ys = np.array([y for _, y in xy])
        latents = country.latent(xs, ys)
        # Census-style truth: an independent asset index over the same
        # thresholds the survey households answer, not the raw field --
        # external validation data measures the same construct.
        all_xs = np.array([x for x, _ in country.tile_xy])
        all_ys = np.array([y for _, y in country.tile_xy])
        field_values = country.latent(all_xs, all_ys)
        thresholds = np.quantile(
            field_values, [(j + 1) / (len(ASSET_COLUMNS) + 1) for j in range(len(ASSET_COLUMNS))]
        )
        census = np.array([float(np.sum(v > thresholds)) for v in latents])
        z = (census - census.mean()) / census.std()
        pops = np.array(
            [tile_info[quadkey(TileId(ANALYSIS_ZOOM, x, y))]["population"] for x, y in xy]
        )
        for level in ADMIN_LEVELS:
            splits = _ADMIN_SPLITS[level]
            col = np.minimum(((xs - country.x0) * splits) // country.width, splits - 1)
            row = np.minimum(((ys - country.y0) * splits) // country.height, splits - 1)
            unit_ids = [f"{country.code}-{level}-{c}-{r}" for c, r in zip(col, row)]
            for (x, y), unit in zip(xy, unit_ids):
                assignment_rows.append([quadkey(TileId(ANALYSIS_ZOOM, x, y)), level, unit])
            for unit in sorted(set(unit_ids)):
                member = np.array([u == unit for u in unit_ids])
                w = pops[member]
                vals = z[member]
                value = float(np.sum(w * vals) / np.sum(w)) if w.sum() > 0 else float(vals.mean())
                truth_rows.append([unit, level, country.code, value])
    paths["admin_assignment"] = os.path.join(outdir, "admin_assignment.csv")
    csvio.write_csv(paths["admin_assignment"], ["quadkey", "level", "unit_id"], assignment_rows, manifest)
    paths["unit_truth"] = os.path.join(outdir, "unit_truth.csv")
    csvio.write_csv(paths["unit_truth"], ["unit_id", "level", "country", "value"], truth_rows, manifest)

    target_rows = []
    for country in countries:
        rng_geo = child_rng(config.seed, "targets", country.code)
        rng_wealth = child_rng(config.seed, "target-wealth", country.code)
        populated = populated_xy[country.code]
        for hi in range(config.target_households):
            x, y = populated[int(rng_geo.integers(len(populated)))]
            center = tile_center(TileId(ANALYSIS_ZOOM, x, y))
            lat = center.lat + float(rng_geo.uniform(-0.008, 0.008))
            lon = center.lon + float(rng_geo.uniform(-0.008, 0.008))
            u, v = country.coords(x, y)
            wealth = float(
                country.latent(x, y)
                + _cluster_noise(country, config, u, v, rng_wealth)
                + config.household_noise * float(rng_wealth.normal())
            )
            weight = float(np.round(rng_geo.uniform(0.5, 2.0), 3))
            target_rows.append(
                [f"{country.code}-t{hi:05d}", country.code, lat, lon, weight, wealth]
            )
    paths["target_households"] = os.path.join(outdir, "target_households.csv")
    csvio.write_csv(
        paths["target_households"],
        ["household_id", "country", "lat", "lon", "weight", "true_wealth"],
        target_rows, manifest,
    )
    return paths


def load_target_households(path: str):
    """Read a targeting survey file into TargetHousehold records."""
    from wealthmap.targeting import TargetHousehold

    _, rows = csvio.read_csv(
        path, required=["household_id", "country", "lat", "lon", "weight", "true_wealth"]
    )
    out = []
    for i, row in enumerate(rows):
        out.append(
            TargetHousehold(
                household_id=row["household_id"],
                country=row["country"],
                location=LatLon(
                    csvio.parse_float(path, i + 1, "lat", row["lat"]),
                    csvio.parse_float(path, i + 1, "lon", row["lon"]),
                ),
                true_wealth=csvio.parse_float(path, i + 1, "true_wealth", row["true_wealth"]),
                weight=csvio.parse_float(path, i + 1, "weight", row["weight"]),
            )
        )
    return out
