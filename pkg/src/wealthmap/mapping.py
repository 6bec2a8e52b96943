"""Tile-level prediction, privacy aggregation, and admin-unit validation.

Privacy aggregation climbs the quadtree: any zoom-14 tile whose
population is at or below the threshold is pooled with the other
estimated tiles inside progressively larger parent tiles until the
covered population strictly exceeds the threshold. Every estimated tile
under the parent that stops the climb receives the pooled
population-weighted value, so small populations are never reported on
their own. Tiles still unresolved at the zoom cap are flagged masked.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from wealthmap.exceptions import InvalidInputError
from wealthmap.gbdt import WealthModel, predict
from wealthmap.ingest import FeatureTable, normalize_with_stats
from wealthmap.tilegrid import ANALYSIS_ZOOM, TileId, parse_quadkey, tile_bounds, tile_center

PRIVACY_POPULATION_THRESHOLD = 50.0
AGGREGATION_ZOOM_CAP = 8


@dataclass
class TileEstimates:
    """Parallel arrays of per-tile estimates at zoom 14."""

    quadkeys: list[str]
    x: np.ndarray
    y: np.ndarray
    rwi: np.ndarray
    population: np.ndarray
    aggregation_level: np.ndarray
    masked: np.ndarray

    @property
    def n(self) -> int:
        return len(self.quadkeys)

    @classmethod
    def from_quadkeys(cls, quadkeys: list[str], rwi, population=None) -> "TileEstimates":
        n = len(quadkeys)
        xs = np.empty(n, dtype=np.int64)
        ys = np.empty(n, dtype=np.int64)
        for i, qk in enumerate(quadkeys):
            t = parse_quadkey(qk)
            if t.zoom != ANALYSIS_ZOOM:
                raise InvalidInputError(f"quadkey {qk!r} is not zoom {ANALYSIS_ZOOM}")
            xs[i] = t.x
            ys[i] = t.y
        return cls(
            quadkeys=list(quadkeys),
            x=xs,
            y=ys,
            rwi=np.asarray(rwi, dtype=float).copy(),
            population=(
                np.zeros(n) if population is None else np.asarray(population, dtype=float).copy()
            ),
            aggregation_level=np.full(n, ANALYSIS_ZOOM, dtype=int),
            masked=np.zeros(n, dtype=bool),
        )

    def tile(self, i: int) -> TileId:
        return TileId(ANALYSIS_ZOOM, int(self.x[i]), int(self.y[i]))


def predict_tiles(model: WealthModel, features: FeatureTable) -> TileEstimates:
    """One estimate per feature row; normalizes raw rows with the model's stats."""
    if features.normalized:
        table = features
    else:
        if not model.norm_stats:
            raise InvalidInputError("model carries no normalization statistics")
        table = normalize_with_stats(features, model.norm_stats)
    rwi = predict(model, table.values) if table.n else np.empty(0)
    return TileEstimates.from_quadkeys(table.quadkeys, rwi)


def set_population(estimates: TileEstimates, population: dict[str, float]) -> None:
    """Attach per-tile populations; tiles absent from the table count as zero."""
    estimates.population = np.array(
        [population.get(qk, 0.0) for qk in estimates.quadkeys], dtype=float
    )


def privacy_aggregate(
    estimates: TileEstimates,
    population: dict[str, float] | None = None,
    threshold: float = PRIVACY_POPULATION_THRESHOLD,
    cap_zoom: int = AGGREGATION_ZOOM_CAP,
) -> TileEstimates:
    """Pool small-population tiles up the quadtree until covered population > threshold.

    "50 or fewer" is read strictly: population <= threshold triggers the
    climb, and a parent stops it only when its covered estimated
    population strictly exceeds the threshold. Parent population counts
    estimated descendant tiles only. Tiles unresolved at ``cap_zoom``
    are pooled there and flagged masked instead of climbing further.
    """
    if population is not None:
        set_population(estimates, population)
    n = estimates.n
    out = TileEstimates(
        quadkeys=list(estimates.quadkeys),
        x=estimates.x.copy(),
        y=estimates.y.copy(),
        rwi=estimates.rwi.copy(),
        population=estimates.population.copy(),
        aggregation_level=np.full(n, ANALYSIS_ZOOM, dtype=int),
        masked=np.zeros(n, dtype=bool),
    )
    if n == 0:
        return out
    original_rwi = estimates.rwi
    pop = out.population
    pending = pop <= threshold
    for zoom in range(ANALYSIS_ZOOM - 1, cap_zoom - 1, -1):
        if not pending.any():
            break
        shift = ANALYSIS_ZOOM - zoom
        keys = (out.x >> shift) << 20 | (out.y >> shift)
        uniq, inverse = np.unique(keys, return_inverse=True)
        covered = np.bincount(inverse, weights=pop, minlength=len(uniq))
        has_pending = np.zeros(len(uniq), dtype=bool)
        has_pending[inverse[pending]] = True
        resolves = has_pending & (covered > threshold)
        if not resolves.any():
            continue
        pooled = np.bincount(inverse, weights=pop * original_rwi, minlength=len(uniq))
        pooled = np.divide(pooled, covered, out=np.zeros_like(pooled), where=covered > 0)
        member = resolves[inverse]
        out.rwi[member] = pooled[inverse[member]]
        out.aggregation_level[member] = zoom
        pending[member] = False
    if pending.any():
        shift = ANALYSIS_ZOOM - cap_zoom
        keys = (out.x >> shift) << 20 | (out.y >> shift)
        uniq, inverse = np.unique(keys, return_inverse=True)
        has_pending = np.zeros(len(uniq), dtype=bool)
        has_pending[inverse[pending]] = True
        covered = np.bincount(inverse, weights=pop, minlength=len(uniq))
        weighted = np.bincount(inverse, weights=pop * original_rwi, minlength=len(uniq))
        counts = np.bincount(inverse, minlength=len(uniq))
        unweighted = np.bincount(inverse, weights=original_rwi, minlength=len(uniq)) / counts
        pooled = np.where(covered > 0, np.divide(weighted, np.where(covered > 0, covered, 1.0)), unweighted)
        member = has_pending[inverse]
        out.rwi[member] = pooled[inverse[member]]
        out.aggregation_level[member] = cap_zoom
        out.masked[member] = True
    return out


@dataclass
class AdminAggregate:
    unit_id: str
    level: str
    mean_rwi: float
    population: float
    n_tiles: int


@dataclass
class UnitAggregation:
    units: dict[str, AdminAggregate]
    dropped_units: list[str] = field(default_factory=list)


def aggregate_to_units(
    estimates: TileEstimates, assignment: dict[str, str], level: str = ""
) -> UnitAggregation:
    """Population-weighted mean estimate per admin unit.

    Only tiles with positive population contribute; units whose assigned
    tiles all have zero population are dropped (reported, not erred).
    Tiles not covered by the assignment are simply outside every unit.
    """
    sums: dict[str, float] = {}
    pops: dict[str, float] = {}
    counts: dict[str, int] = {}
    seen: dict[str, int] = {}
    for i, qk in enumerate(estimates.quadkeys):
        unit = assignment.get(qk)
        if unit is None:
            continue
        seen[unit] = seen.get(unit, 0) + 1
        p = float(estimates.population[i])
        if p <= 0.0:
            continue
        sums[unit] = sums.get(unit, 0.0) + p * float(estimates.rwi[i])
        pops[unit] = pops.get(unit, 0.0) + p
        counts[unit] = counts.get(unit, 0) + 1
    units = {
        unit: AdminAggregate(
            unit_id=unit,
            level=level,
            mean_rwi=sums[unit] / pops[unit],
            population=pops[unit],
            n_tiles=counts[unit],
        )
        for unit in sorted(sums)
    }
    dropped = sorted(u for u in seen if u not in units)
    return UnitAggregation(units=units, dropped_units=dropped)


@dataclass
class UnitValidation:
    pooled_r2: float
    per_country: dict[str, float | None]
    n_matched: int
    scatter: list[tuple[str, float, float, float]]  # unit, truth, predicted, weight


def validate_units(
    aggregates: dict[str, AdminAggregate],
    truth: dict[str, float],
    countries: dict[str, str] | None = None,
) -> UnitValidation:
    """Population-weighted R^2 of unit estimates against external unit means."""
    from wealthmap.evaluation import r_squared, subset_r_squared

    matched = sorted(set(aggregates) & set(truth))
    if len(matched) < 2:
        raise InvalidInputError(f"only {len(matched)} units match between estimates and truth")
    pred = np.array([aggregates[u].mean_rwi for u in matched])
    true = np.array([truth[u] for u in matched])
    weights = np.array([aggregates[u].population for u in matched])
    pooled = r_squared(true, pred, weights)
    per_country: dict[str, float | None] = {}
    if countries:
        labels = [countries.get(u, "?") for u in matched]
        per_country = subset_r_squared(true, pred, labels, weights).per_group
    scatter = [
        (u, float(t), float(p), float(w)) for u, t, p, w in zip(matched, true, pred, weights)
    ]
    return UnitValidation(
        pooled_r2=pooled, per_country=per_country, n_matched=len(matched), scatter=scatter
    )


def estimates_geojson(estimates: TileEstimates, error: np.ndarray | None = None) -> dict:
    """Tile polygons with the same properties as the delimited export."""
    features = []
    for i in range(estimates.n):
        t = estimates.tile(i)
        west, south, east, north = tile_bounds(t)
        props = {
            "quadkey": estimates.quadkeys[i],
            "rwi": float(estimates.rwi[i]),
            "aggregation_level": int(estimates.aggregation_level[i]),
            "masked": bool(estimates.masked[i]),
            "population": float(estimates.population[i]),
        }
        if error is not None:
            props["error"] = float(error[i])
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[
                        [west, south], [east, south], [east, north], [west, north], [west, south],
                    ]],
                },
                "properties": props,
            }
        )
    return {"type": "FeatureCollection", "features": features}


def tile_centers(estimates: TileEstimates) -> tuple[np.ndarray, np.ndarray]:
    lats = np.empty(estimates.n)
    lons = np.empty(estimates.n)
    for i in range(estimates.n):
        c = tile_center(estimates.tile(i))
        lats[i] = c.lat
        lons[i] = c.lon
    return lats, lons
