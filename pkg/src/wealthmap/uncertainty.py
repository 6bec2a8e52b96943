"""Per-tile error estimation and generalization diagnostics.

A linear regression of absolute out-of-sample residuals on observable
tile and country characteristics gives every tile an expected error.
Distance and radius-count predictors come from an exact grid-bucketed
spatial index over cluster centroids: buckets only prune candidates,
never the answer, so results equal brute force.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from wealthmap import csvio
from wealthmap.exceptions import DegenerateInputError, InvalidInputError, SchemaError
from wealthmap.tilegrid import EARTH_RADIUS_KM, haversine_km_arrays

KM_PER_DEG = math.pi / 180.0 * EARTH_RADIUS_KM

RADIUS_COUNTS_KM = (50.0, 250.0, 500.0, 1000.0)

CONTINENTS_WITH_DUMMIES = ("america", "asia", "europe")

SPECIFICATIONS = ("base", "imagery", "no_rwi")

# Tile-feature block: (predictor name, source column, transform)
_TILE_FEATURE_TRANSFORMS = [
    ("road_density", "road_density", "raw"),
    ("ln_slope", "slope", "ln1p"),
    ("ln_elevation", "elevation", "ln1p"),
    ("ln_precipitation", "precipitation", "ln1p"),
    ("is_urban_builtup", "urban_builtup", "raw"),
    ("ln_radiance", "radiance", "ln1p"),
    ("ln_tile_population", "population", "ln1p"),
    ("ln_cell_towers", "cell_towers", "ln1p"),
    ("ln_wifi_points", "wifi_points", "ln1p"),
    ("ln_mobile_devices", "mobile_devices", "ln1p"),
    ("ln_android_devices", "android_devices", "ln1p"),
    ("ln_ios_devices", "ios_devices", "ln1p"),
]


def _ln1p_nonneg(x: np.ndarray) -> np.ndarray:
    # Quantities that can touch (or dip just below) zero: clamp, then ln(1+x).
    return np.log1p(np.clip(x, 0.0, None))


@dataclass(frozen=True)
class CountryAttributes:
    iso2: str
    area_km2: float
    population: float
    island: bool
    landlocked: bool
    continent: str
    n_survey_neighbors: float
    dist_closest_survey_km: float


def load_country_attributes(path: str) -> dict[str, CountryAttributes]:
    required = [
        "iso2", "area_km2", "population", "island", "landlocked", "continent",
        "n_survey_neighbors", "dist_closest_survey_km",
    ]
    _, rows = csvio.read_csv(path, required=required)
    out = {}
    for i, row in enumerate(rows):
        iso2 = row["iso2"]
        if iso2 in out:
            raise SchemaError(f"{path}: row {i + 1}: duplicate country {iso2!r}")
        out[iso2] = CountryAttributes(
            iso2=iso2,
            area_km2=csvio.parse_float(path, i + 1, "area_km2", row["area_km2"]),
            population=csvio.parse_float(path, i + 1, "population", row["population"]),
            island=row["island"] == "1",
            landlocked=row["landlocked"] == "1",
            continent=row["continent"].lower(),
            n_survey_neighbors=csvio.parse_float(path, i + 1, "n_survey_neighbors", row["n_survey_neighbors"]),
            dist_closest_survey_km=csvio.parse_float(
                path, i + 1, "dist_closest_survey_km", row["dist_closest_survey_km"]
            ),
        )
    return out


class ClusterIndex:
    """Exact nearest-neighbor and radius counting over cluster centroids.

    Points hash into lat/lon degree buckets; queries consult every bucket
    intersecting a bounding box that provably contains the search disc,
    then filter with exact haversine distances.
    """

    def __init__(self, lats, lons, countries=None, cell_deg: float = 1.0):
        self.lats = np.asarray(lats, dtype=float)
        self.lons = np.asarray(lons, dtype=float)
        if len(self.lats) == 0:
            raise DegenerateInputError("cluster index needs at least one point")
        self.countries = list(countries) if countries is not None else [""] * len(self.lats)
        self.cell = cell_deg
        self.buckets: dict[tuple[int, int], list[int]] = {}
        for i in range(len(self.lats)):
            self.buckets.setdefault(self._key(self.lats[i], self.lons[i]), []).append(i)

    def _key(self, lat: float, lon: float) -> tuple[int, int]:
        return (int(math.floor(lat / self.cell)), int(math.floor(((lon + 180.0) % 360.0) / self.cell)))

    def _candidates(self, lat: float, lon: float, radius_km: float) -> list[int]:
        dlat = math.degrees(radius_km / EARTH_RADIUS_KM)
        lat_lo, lat_hi = lat - dlat, lat + dlat
        # The tightest longitude half-width that still contains the disc.
        max_abs_lat = min(max(abs(lat_lo), abs(lat_hi)), 90.0)
        cos_min = math.cos(math.radians(max_abs_lat))
        s = math.sin(min(radius_km / (2.0 * EARTH_RADIUS_KM), math.pi / 2.0))
        if cos_min <= 0.0 or s >= cos_min:
            dlon = 180.0
        else:
            dlon = math.degrees(2.0 * math.asin(s / cos_min))
        rows = range(
            int(math.floor(max(lat_lo, -90.0) / self.cell)),
            int(math.floor(min(lat_hi, 90.0) / self.cell)) + 1,
        )
        n_lon_cells = int(math.ceil(360.0 / self.cell))
        lon_center = int(math.floor(((lon + 180.0) % 360.0) / self.cell))
        span = int(math.ceil(dlon / self.cell)) + 1
        if 2 * span + 1 >= n_lon_cells:
            cols = range(n_lon_cells)
        else:
            cols = [(lon_center + k) % n_lon_cells for k in range(-span, span + 1)]
        out: list[int] = []
        for r in rows:
            for c in cols:
                out.extend(self.buckets.get((r, c), ()))
        return out

    def count_within(self, lat: float, lon: float, radius_km: float, predicate=None) -> int:
        idx = self._candidates(lat, lon, radius_km)
        if not idx:
            return 0
        idx = np.asarray(idx, dtype=int)
        d = haversine_km_arrays(lat, lon, self.lats[idx], self.lons[idx])
        if predicate is None:
            return int(np.sum(d <= radius_km))
        keep = np.array([predicate(self.countries[i]) for i in idx])
        return int(np.sum((d <= radius_km) & keep))

    def nearest(self, lat: float, lon: float, predicate=None) -> float:
        """Distance in km to the nearest point satisfying ``predicate``."""
        radius = self.cell * KM_PER_DEG
        max_radius = math.pi * EARTH_RADIUS_KM + 1.0
        while True:
            idx = self._candidates(lat, lon, radius)
            if predicate is not None:
                idx = [i for i in idx if predicate(self.countries[i])]
            if idx:
                arr = np.asarray(idx, dtype=int)
                d = haversine_km_arrays(lat, lon, self.lats[arr], self.lons[arr])
                best = float(d.min())
                if best <= radius:
                    return best
                radius = best  # a corner candidate: re-query the exact disc
            else:
                if radius >= max_radius:
                    return math.inf
                radius = min(radius * 4.0, max_radius)


ERROR_PREDICTOR_BLOCKS = {
    "distance": [
        "ln_dist_closest_survey_country",
        "ln_dist_closest_cluster",
        "ln_n_neighbor_survey_countries",
        "ln_clusters_50km",
        "ln_clusters_250km",
        "ln_clusters_500km",
        "ln_clusters_1000km",
    ],
    "country": [
        "is_island",
        "is_landlocked",
        "is_america",
        "is_asia",
        "is_europe",
        "ln_area",
        "ln_country_population",
        "ln_gdp_pc",
        "gini",
    ],
    "tile": [name for name, _, _ in _TILE_FEATURE_TRANSFORMS],
}


@dataclass
class ErrorPredictors:
    names: list[str]
    matrix: np.ndarray
    specification: str


def build_error_predictors(
    lats,
    lons,
    tile_countries,
    scalar_features: np.ndarray,
    scalar_names: list[str],
    index: ClusterIndex,
    country_stats,
    country_attrs: dict[str, CountryAttributes],
    specification: str = "base",
    image_features: np.ndarray | None = None,
    image_names: list[str] | None = None,
) -> ErrorPredictors:
    """Assemble the error-model design matrix for one specification subset.

    ``base`` uses distance, country, and tile blocks; ``imagery`` appends
    the image components; ``no_rwi`` keeps only the distance and country
    blocks (everything not used to build the wealth predictions).
    """
    if specification not in SPECIFICATIONS:
        raise InvalidInputError(f"unknown specification {specification!r}")
    lats = np.asarray(lats, dtype=float)
    lons = np.asarray(lons, dtype=float)
    n = len(lats)
    col_of = {name: j for j, name in enumerate(scalar_names)}

    columns: dict[str, np.ndarray] = {}
    dist_any = np.empty(n)
    dist_foreign = np.empty(n)
    counts = {r: np.empty(n) for r in RADIUS_COUNTS_KM}
    for i in range(n):
        here = tile_countries[i]
        dist_any[i] = index.nearest(lats[i], lons[i])
        dist_foreign[i] = index.nearest(lats[i], lons[i], predicate=lambda c, here=here: c != here)
        if not math.isfinite(dist_foreign[i]):
            raise DegenerateInputError(
                f"no ground-truth cluster outside country {here!r}; "
                "the border-distance proxy needs at least two surveyed countries"
            )
        for r in RADIUS_COUNTS_KM:
            counts[r][i] = index.count_within(lats[i], lons[i], r)
    columns["ln_dist_closest_survey_country"] = np.log1p(dist_foreign)
    columns["ln_dist_closest_cluster"] = np.log1p(dist_any)
    for r in RADIUS_COUNTS_KM:
        columns[f"ln_clusters_{int(r)}km"] = np.log1p(counts[r])

    def attr(country: str) -> CountryAttributes:
        if country not in country_attrs:
            raise InvalidInputError(f"country {country!r} missing from attribute table")
        return country_attrs[country]

    def stat(country: str):
        if country not in country_stats:
            raise InvalidInputError(f"country {country!r} missing from country stats")
        return country_stats[country]

    columns["ln_n_neighbor_survey_countries"] = np.log1p(
        np.array([attr(c).n_survey_neighbors for c in tile_countries])
    )
    columns["is_island"] = np.array([1.0 if attr(c).island else 0.0 for c in tile_countries])
    columns["is_landlocked"] = np.array(
        [1.0 if attr(c).landlocked else 0.0 for c in tile_countries]
    )
    for cont in CONTINENTS_WITH_DUMMIES:
        columns[f"is_{cont}"] = np.array(
            [1.0 if attr(c).continent == cont else 0.0 for c in tile_countries]
        )
    columns["ln_area"] = np.log(np.array([attr(c).area_km2 for c in tile_countries]))
    columns["ln_country_population"] = np.log(
        np.array([attr(c).population for c in tile_countries])
    )
    columns["ln_gdp_pc"] = np.log(np.array([stat(c).gdp_pc for c in tile_countries]))
    columns["gini"] = np.array([stat(c).gini for c in tile_countries])

    for name, source, transform in _TILE_FEATURE_TRANSFORMS:
        raw = scalar_features[:, col_of[source]]
        columns[name] = raw.astype(float) if transform == "raw" else _ln1p_nonneg(raw)

    names = list(ERROR_PREDICTOR_BLOCKS["distance"]) + list(ERROR_PREDICTOR_BLOCKS["country"])
    if specification in ("base", "imagery"):
        names += ERROR_PREDICTOR_BLOCKS["tile"]
    matrix = np.column_stack([columns[name] for name in names])
    if specification == "imagery":
        if image_features is None:
            raise InvalidInputError("imagery specification needs image feature columns")
        matrix = np.column_stack([matrix, np.asarray(image_features, dtype=float)])
        names = names + list(image_names or [f"img_{j}" for j in range(image_features.shape[1])])
    return ErrorPredictors(names=names, matrix=matrix, specification=specification)


@dataclass
class LinearErrorModel:
    predictor_names: list[str]  # includes "constant" last
    beta: np.ndarray
    standard_errors: np.ndarray
    r2: float
    n: int
    rank_deficient: bool = False


def fit_least_squares(y, X, weights=None, predictor_names=None) -> LinearErrorModel:
    """Ordinary (or weighted) least squares with classical standard errors.

    Solves the normal equations; an ill-conditioned system falls back to
    a tiny-ridge solve, and a rank-deficient design takes the
    deterministic minimal-norm solution with a warning flag.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise InvalidInputError("fit_least_squares: X and y disagree")
    n, p_raw = X.shape
    names = list(predictor_names) if predictor_names else [f"x{j}" for j in range(p_raw)]
    if len(names) != p_raw:
        raise InvalidInputError("predictor_names arity mismatch")
    Xd = np.column_stack([X, np.ones(n)])
    names = names + ["constant"]
    p = p_raw + 1
    if n <= p:
        raise InvalidInputError(f"need n > predictors: n={n}, predictors={p}")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    sw = np.sqrt(w)
    Xw = Xd * sw[:, None]
    yw = y * sw
    A = Xw.T @ Xw
    b = Xw.T @ yw
    rank = int(np.linalg.matrix_rank(Xw))
    rank_deficient = rank < p
    if rank_deficient:
        beta, *_ = np.linalg.lstsq(Xw, yw, rcond=None)
        cov_core = np.linalg.pinv(A)
    else:
        try:
            beta = np.linalg.solve(A, b)
            cov_core = np.linalg.inv(A)
        except np.linalg.LinAlgError:
            ridge = 1e-10 * float(np.trace(A))
            beta = np.linalg.solve(A + ridge * np.eye(p), b)
            cov_core = np.linalg.inv(A + ridge * np.eye(p))
    resid = y - Xd @ beta
    dof = max(n - rank, 1)
    sigma2 = float(np.sum(w * resid**2)) / dof
    se = np.sqrt(np.clip(np.diag(cov_core) * sigma2, 0.0, None))
    my = float(np.sum(w * y) / np.sum(w))
    sst = float(np.sum(w * (y - my) ** 2))
    r2 = 1.0 - float(np.sum(w * resid**2)) / sst if sst > 0 else float("nan")
    return LinearErrorModel(
        predictor_names=names, beta=beta, standard_errors=se, r2=r2, n=n,
        rank_deficient=rank_deficient,
    )


def predict_error(model: LinearErrorModel, X) -> np.ndarray:
    """Linear prediction clamped below at zero: an absolute error is nonnegative."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(model.beta) - 1:
        raise InvalidInputError(
            f"predictor arity {X.shape[1] if X.ndim == 2 else '?'} does not match model "
            f"({len(model.beta) - 1})"
        )
    raw = X @ model.beta[:-1] + model.beta[-1]
    return np.clip(raw, 0.0, None)


@dataclass
class CountrySummaryRow:
    country: str
    n_tiles: int
    err_mean: float
    err_median: float
    err_sd: float
    mse_mean: float | None = None
    mse_median: float | None = None
    mse_sd: float | None = None


def country_error_summary(
    errors, error_countries, squared_residuals=None, residual_countries=None
) -> list[CountrySummaryRow]:
    """Per-country mean/median/sd of predicted error, plus squared-residual
    summaries for the countries where ground truth exists."""
    errors = np.asarray(errors, dtype=float)
    by_country: dict[str, list[float]] = {}
    for e, c in zip(errors, error_countries):
        by_country.setdefault(c, []).append(float(e))
    mse_by_country: dict[str, list[float]] = {}
    if squared_residuals is not None:
        for v, c in zip(squared_residuals, residual_countries):
            mse_by_country.setdefault(c, []).append(float(v))
    rows = []
    for country in sorted(by_country):
        vals = np.asarray(by_country[country])
        row = CountrySummaryRow(
            country=country,
            n_tiles=len(vals),
            err_mean=float(vals.mean()),
            err_median=float(np.median(vals)),
            err_sd=float(vals.std()),  # population sd
        )
        if country in mse_by_country:
            mv = np.asarray(mse_by_country[country])
            row.mse_mean = float(mv.mean())
            row.mse_median = float(np.median(mv))
            row.mse_sd = float(mv.std())
        rows.append(row)
    return rows


def specification_stability(errors_a, errors_b, countries) -> float:
    """Spearman rank correlation of per-country median predicted errors
    under two predictor specifications; a stability diagnostic, not an
    asserted value (the magnitude is data-dependent)."""
    from wealthmap.util import average_ranks

    def medians(errors):
        groups: dict[str, list[float]] = {}
        for e, c in zip(errors, countries):
            groups.setdefault(c, []).append(float(e))
        return {c: float(np.median(v)) for c, v in groups.items()}

    med_a = medians(errors_a)
    med_b = medians(errors_b)
    names = sorted(med_a)
    if len(names) < 2:
        raise InvalidInputError("specification stability needs >= 2 countries")
    ra = average_ranks([med_a[c] for c in names])
    rb = average_ranks([med_b[c] for c in names])
    ra = ra - ra.mean()
    rb = rb - rb.mean()
    denom = math.sqrt(float(np.sum(ra**2)) * float(np.sum(rb**2)))
    if denom == 0.0:
        raise DegenerateInputError("constant ranks make the correlation undefined")
    return float(np.sum(ra * rb) / denom)


def cosine_dissimilarity_matrix(attr_matrix: np.ndarray) -> np.ndarray:
    """1 - cosine similarity between standardized country attribute vectors."""
    A = np.asarray(attr_matrix, dtype=float)
    means = A.mean(axis=0)
    stds = A.std(axis=0)
    Z = np.where(stds > 0, (A - means) / np.where(stds > 0, stds, 1.0), 0.0)
    norms = np.sqrt(np.sum(Z**2, axis=1))
    n = len(A)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if norms[i] == 0.0 and norms[j] == 0.0:
                out[i, j] = 0.0
            elif norms[i] == 0.0 or norms[j] == 0.0:
                out[i, j] = 1.0
            else:
                sim = float(Z[i] @ Z[j]) / (norms[i] * norms[j])
                out[i, j] = 1.0 - sim
    return out


@dataclass
class DissimilarityPoint:
    decile: int
    threshold: float
    mean_error: float
    n_countries: int


def dissimilarity_curve(
    country_names: list[str], attr_matrix, pair_errors, n_deciles: int = 10
) -> tuple[list[DissimilarityPoint], list[str]]:
    """Mean transfer error when training partners must be at least d dissimilar.

    ``pair_errors[i, j]`` is the error of a model trained on country j and
    tested on country i. For each dissimilarity decile d, a country's
    error averages over partners at dissimilarity >= d; countries left
    with no partner are skipped (returned in the second element).
    """
    D = cosine_dissimilarity_matrix(attr_matrix)
    E = np.asarray(pair_errors, dtype=float)
    n = len(country_names)
    if E.shape != (n, n):
        raise InvalidInputError("pair_errors shape does not match country list")
    off_diag = D[~np.eye(n, dtype=bool)]
    points = []
    skipped: set[str] = set()
    for k in range(n_deciles):
        threshold = float(np.quantile(off_diag, k / n_deciles))
        per_country = []
        for i in range(n):
            partners = [j for j in range(n) if j != i and D[i, j] >= threshold]
            if not partners:
                skipped.add(country_names[i])
                continue
            per_country.append(float(np.mean(E[i, partners])))
        points.append(
            DissimilarityPoint(
                decile=k, threshold=threshold,
                mean_error=float(np.mean(per_country)) if per_country else float("nan"),
                n_countries=len(per_country),
            )
        )
    return points, sorted(skipped)
