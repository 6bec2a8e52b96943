"""Ground-truth construction: household asset index, cluster labels, spatial join.

Survey centroids are jittered for privacy (up to ~2 km in urban areas,
~5 km rural), so each cluster's feature vector is the population-weighted
average over a window of tiles around the centroid: 2x2 urban, 4x4 rural.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from wealthmap.exceptions import DegenerateInputError, InvalidInputError
from wealthmap.ingest import ASSET_COLUMNS, ClusterRow, FeatureTable, HouseholdRow, pca_fit, pca_project
from wealthmap.tilegrid import ANALYSIS_ZOOM, LatLon, TileId, latlon_to_tile, quadkey

URBAN_WINDOW = 2
RURAL_WINDOW = 4

ELECTRICITY_INDEX = ASSET_COLUMNS.index("electricity")


@dataclass
class ClusterObservation:
    """One survey village with its label and (after joining) feature vector."""

    cluster_id: str
    country: str
    centroid: LatLon
    urban: bool
    rwi_label: float
    n_households: int
    features: np.ndarray | None = None


@dataclass
class JoinDiagnostics:
    n_joined: int = 0
    n_unjoinable: int = 0
    unjoinable_ids: list[str] = field(default_factory=list)


def household_wealth_index(asset_matrix, electricity_column: int = ELECTRICITY_INDEX) -> np.ndarray:
    """Asset-index scores for the households of one country.

    First principal component of the standardized asset indicators,
    sign-oriented so the score moves with the electricity indicator.
    Scores are mean zero by construction.
    """
    X = np.asarray(asset_matrix, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InvalidInputError("household_wealth_index needs >= 2 households")
    if np.all(X == X[0]):
        raise DegenerateInputError("all households have identical asset responses")
    model = pca_fit(X, k=1, scale=True)
    scores = pca_project(model, X)[:, 0]
    elec = X[:, electricity_column]
    corr = float(np.sum((scores - scores.mean()) * (elec - elec.mean())))
    if corr < 0:
        scores = -scores
    return scores


def cluster_label(
    cluster_ids, rwi, weights=None, weighted: bool = False
) -> tuple[dict[str, float], int]:
    """Per-cluster mean household index.

    The default is unweighted; ``weighted=True`` reproduces the
    survey-weight robustness variant. Returns (labels, skipped-count);
    clusters whose household indices are all non-finite are skipped.
    """
    rwi = np.asarray(rwi, dtype=float)
    if weighted:
        if weights is None:
            raise InvalidInputError("weighted cluster labels require weights")
        w = np.asarray(weights, dtype=float)
    else:
        w = np.ones(len(rwi))
    groups: dict[str, list[int]] = {}
    for i, cid in enumerate(cluster_ids):
        groups.setdefault(cid, []).append(i)
    labels: dict[str, float] = {}
    skipped = 0
    for cid, idx in groups.items():
        vals = rwi[idx]
        wts = w[idx]
        ok = np.isfinite(vals)
        if not np.any(ok) or np.sum(wts[ok]) == 0.0:
            skipped += 1
            continue
        labels[cid] = float(np.sum(vals[ok] * wts[ok]) / np.sum(wts[ok]))
    return labels, skipped


def window_tiles(centroid: LatLon, urban: bool, zoom: int = ANALYSIS_ZOOM) -> list[TileId]:
    """Tiles covering the jitter disc around a centroid.

    The 2x2 urban window is the centroid tile plus the three neighbors
    toward the centroid's within-tile quadrant; the 4x4 rural window pads
    that by one tile on every side. Columns wrap around the antimeridian;
    rows outside the Mercator grid are dropped.
    """
    import math

    t = latlon_to_tile(centroid, zoom)
    n = 1 << zoom
    fx = (centroid.lon + 180.0) / 360.0 * n - t.x
    sin_lat = math.sin(math.radians(centroid.lat))
    fy = (0.5 - math.log((1.0 + sin_lat) / (1.0 - sin_lat)) / (4.0 * math.pi)) * n - t.y
    dx = 1 if fx >= 0.5 else -1
    dy = 1 if fy >= 0.5 else -1
    cols = sorted((t.x, t.x + dx))
    rows = sorted((t.y, t.y + dy))
    if not urban:
        cols = [cols[0] - 1, cols[0], cols[1], cols[1] + 1]
        rows = [rows[0] - 1, rows[0], rows[1], rows[1] + 1]
    tiles = []
    for y in rows:
        if not 0 <= y < n:
            continue
        for x in cols:
            tiles.append(TileId(zoom, x % n, y))
    return tiles


def spatial_join(
    cluster: ClusterObservation,
    features_by_quadkey: dict[str, np.ndarray],
    population: dict[str, float],
) -> np.ndarray:
    """Population-weighted mean feature vector over the cluster's window.

    Window tiles missing from the feature table are excluded (weights
    renormalize over what remains); an all-zero window population falls
    back to an unweighted mean. No feature-bearing tile at all raises.
    """
    tiles = window_tiles(cluster.centroid, cluster.urban)
    vectors = []
    weights = []
    for t in tiles:
        qk = quadkey(t)
        vec = features_by_quadkey.get(qk)
        if vec is None:
            continue
        vectors.append(vec)
        weights.append(population.get(qk, 0.0))
    if not vectors:
        raise DegenerateInputError(
            f"cluster {cluster.cluster_id}: no window tile has features"
        )
    V = np.asarray(vectors, dtype=float)
    w = np.asarray(weights, dtype=float)
    if w.sum() == 0.0:
        return V.mean(axis=0)
    return (w[:, None] * V).sum(axis=0) / w.sum()


def build_training_table(
    clusters: list[ClusterRow],
    households: list[HouseholdRow],
    normalized: FeatureTable,
    population: dict[str, float],
    weighted_labels: bool = False,
) -> tuple[list[ClusterObservation], JoinDiagnostics]:
    """Full label pipeline: asset index -> cluster labels -> joined features.

    The asset PCA runs per country over all of that country's households;
    labels average the index within each cluster; the spatial join then
    attaches a feature vector to every labelable cluster.
    """
    if not normalized.normalized:
        raise InvalidInputError("spatial join requires a normalized feature table")
    by_country: dict[str, list[HouseholdRow]] = {}
    for hh in households:
        by_country.setdefault(hh.country, []).append(hh)

    labels: dict[str, float] = {}
    for country, rows in by_country.items():
        X = np.stack([hh.assets for hh in rows])
        scores = household_wealth_index(X)
        country_labels, _ = cluster_label(
            [hh.cluster_id for hh in rows],
            scores,
            weights=[hh.weight for hh in rows],
            weighted=weighted_labels,
        )
        labels.update(country_labels)

    features_by_quadkey = {
        qk: normalized.values[i] for i, qk in enumerate(normalized.quadkeys)
    }
    observations: list[ClusterObservation] = []
    diagnostics = JoinDiagnostics()
    hh_counts: dict[str, int] = {}
    for hh in households:
        hh_counts[hh.cluster_id] = hh_counts.get(hh.cluster_id, 0) + 1
    for row in clusters:
        if row.cluster_id not in labels:
            continue
        obs = ClusterObservation(
            cluster_id=row.cluster_id,
            country=row.country,
            centroid=LatLon(row.lat, row.lon),
            urban=row.urban,
            rwi_label=labels[row.cluster_id],
            n_households=hh_counts.get(row.cluster_id, 0),
        )
        try:
            obs.features = spatial_join(obs, features_by_quadkey, population)
        except DegenerateInputError:
            diagnostics.n_unjoinable += 1
            diagnostics.unjoinable_ids.append(row.cluster_id)
            continue
        diagnostics.n_joined += 1
        observations.append(obs)
    return observations, diagnostics
