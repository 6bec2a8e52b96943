"""Tabular input loading, per-country feature normalization, and PCA.

The PCA here serves two callers: the household asset index (first
component of the asset indicators, per country) and the compression of
precomputed image features into principal components.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from wealthmap import csvio
from wealthmap.exceptions import DegenerateInputError, InvalidInputError, SchemaError
from wealthmap.tilegrid import parse_quadkey

SCALAR_FEATURES = [
    "road_density",
    "urban_builtup",
    "elevation",
    "slope",
    "precipitation",
    "population",
    "cell_towers",
    "wifi_points",
    "mobile_devices",
    "android_devices",
    "ios_devices",
    "radiance",
]
IMAGE_FEATURES = [f"img_pc_{i:03d}" for i in range(100)]
FEATURE_COLUMNS = SCALAR_FEATURES + IMAGE_FEATURES

ASSET_COLUMNS = [
    "electricity",
    "telephone",
    "automobile",
    "motorcycle",
    "refrigerator",
    "tv",
    "radio",
    "water_supply",
    "cooking_fuel",
    "trash_disposal",
    "toilet",
    "floor_material",
    "wall_material",
    "roof_material",
    "rooms",
]


@dataclass
class FeatureTable:
    """Per-tile feature rows with country tags and normalization statistics.

    ``norm_stats`` maps country code to (means, stds) over the feature
    columns; it is populated by :func:`normalize_per_country` and reused
    to normalize prediction-time rows.
    """

    quadkeys: list[str]
    countries: list[str]
    values: np.ndarray
    feature_names: list[str]
    norm_stats: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    normalized: bool = False

    @property
    def n(self) -> int:
        return len(self.quadkeys)

    def country_index(self) -> dict[str, np.ndarray]:
        """Row indices grouped by country, in first-appearance order."""
        groups: dict[str, list[int]] = {}
        for i, c in enumerate(self.countries):
            groups.setdefault(c, []).append(i)
        return {c: np.asarray(idx, dtype=int) for c, idx in groups.items()}


@dataclass
class ClusterRow:
    cluster_id: str
    country: str
    lat: float
    lon: float
    urban: bool
    survey_year: str


@dataclass
class HouseholdRow:
    household_id: str
    country: str
    cluster_id: str
    lat: float | None
    lon: float | None
    weight: float
    assets: np.ndarray


def _check_quadkey(path: str, row_idx: int, qk: str, expected_len: int | None = 14) -> str:
    try:
        parse_quadkey(qk)
    except InvalidInputError as e:
        raise SchemaError(f"{path}: row {row_idx}: bad quadkey {qk!r}: {e}")
    if expected_len is not None and len(qk) != expected_len:
        raise SchemaError(
            f"{path}: row {row_idx}: quadkey {qk!r} has length {len(qk)}, expected {expected_len}"
        )
    return qk


def load_features(path: str) -> FeatureTable:
    _, rows = csvio.read_csv(path, required=["quadkey", "country"] + FEATURE_COLUMNS)
    quadkeys: list[str] = []
    countries: list[str] = []
    seen: set[str] = set()
    values = np.empty((len(rows), len(FEATURE_COLUMNS)), dtype=float)
    for i, row in enumerate(rows):
        qk = _check_quadkey(path, i + 1, row["quadkey"])
        if qk in seen:
            raise SchemaError(f"{path}: row {i + 1}: duplicate quadkey {qk!r}")
        seen.add(qk)
        quadkeys.append(qk)
        countries.append(row["country"])
        for j, col in enumerate(FEATURE_COLUMNS):
            values[i, j] = csvio.parse_float(path, i + 1, col, row[col])
    return FeatureTable(quadkeys, countries, values, list(FEATURE_COLUMNS))


def load_population(path: str) -> dict[str, float]:
    _, rows = csvio.read_csv(path, required=["quadkey", "population"])
    pop: dict[str, float] = {}
    for i, row in enumerate(rows):
        qk = _check_quadkey(path, i + 1, row["quadkey"])
        if qk in pop:
            raise SchemaError(f"{path}: row {i + 1}: duplicate quadkey {qk!r}")
        v = csvio.parse_float(path, i + 1, "population", row["population"])
        if v < 0:
            raise SchemaError(f"{path}: row {i + 1}: negative population {v}")
        pop[qk] = v
    return pop


def load_clusters(path: str) -> list[ClusterRow]:
    _, rows = csvio.read_csv(
        path, required=["cluster_id", "country", "lat", "lon", "urban", "survey_year"]
    )
    out = []
    seen: set[str] = set()
    for i, row in enumerate(rows):
        cid = row["cluster_id"]
        if cid in seen:
            raise SchemaError(f"{path}: row {i + 1}: duplicate cluster_id {cid!r}")
        seen.add(cid)
        urban_raw = row["urban"]
        if urban_raw not in ("0", "1"):
            raise SchemaError(f"{path}: row {i + 1}: urban flag must be 0 or 1, got {urban_raw!r}")
        out.append(
            ClusterRow(
                cluster_id=cid,
                country=row["country"],
                lat=csvio.parse_float(path, i + 1, "lat", row["lat"]),
                lon=csvio.parse_float(path, i + 1, "lon", row["lon"]),
                urban=urban_raw == "1",
                survey_year=row["survey_year"],
            )
        )
    return out


def load_households(path: str) -> list[HouseholdRow]:
    _, rows = csvio.read_csv(
        path, required=["household_id", "country", "cluster_id", "lat", "lon", "weight"] + ASSET_COLUMNS
    )
    out = []
    seen: set[str] = set()
    for i, row in enumerate(rows):
        hid = row["household_id"]
        if hid in seen:
            raise SchemaError(f"{path}: row {i + 1}: duplicate household_id {hid!r}")
        seen.add(hid)
        weight = csvio.parse_float(path, i + 1, "weight", row["weight"])
        if weight < 0:
            raise SchemaError(f"{path}: row {i + 1}: negative survey weight {weight}")
        assets = np.array(
            [csvio.parse_float(path, i + 1, col, row[col]) for col in ASSET_COLUMNS], dtype=float
        )
        out.append(
            HouseholdRow(
                household_id=hid,
                country=row["country"],
                cluster_id=row["cluster_id"],
                lat=csvio.parse_float(path, i + 1, "lat", row["lat"]) if row["lat"] else None,
                lon=csvio.parse_float(path, i + 1, "lon", row["lon"]) if row["lon"] else None,
                weight=weight,
                assets=assets,
            )
        )
    return out


def load_country_stats(path: str):
    from wealthmap.awe import CountryStats

    _, rows = csvio.read_csv(path, required=["iso2", "gdp_pc_usd", "gdp_year", "gini", "gini_year"])
    stats = {}
    for i, row in enumerate(rows):
        iso2 = row["iso2"]
        if iso2 in stats:
            raise SchemaError(f"{path}: row {i + 1}: duplicate country {iso2!r}")
        stats[iso2] = CountryStats(
            iso2=iso2,
            gdp_pc=csvio.parse_float(path, i + 1, "gdp_pc_usd", row["gdp_pc_usd"]),
            gini=csvio.parse_float(path, i + 1, "gini", row["gini"]),
            gdp_year=row["gdp_year"],
            gini_year=row["gini_year"],
        )
    return stats


def load_admin_assignment(path: str) -> dict[str, dict[str, str]]:
    """Map admin level -> {quadkey -> unit_id}."""
    _, rows = csvio.read_csv(path, required=["quadkey", "level", "unit_id"])
    levels: dict[str, dict[str, str]] = {}
    for i, row in enumerate(rows):
        qk = _check_quadkey(path, i + 1, row["quadkey"])
        table = levels.setdefault(row["level"], {})
        if qk in table:
            raise SchemaError(
                f"{path}: row {i + 1}: duplicate quadkey {qk!r} within level {row['level']!r}"
            )
        table[qk] = row["unit_id"]
    return levels


def load_tables(paths: dict[str, str]):
    """Load the full input file set; keys: features, population, clusters, households, country_stats."""
    return (
        load_features(paths["features"]),
        load_population(paths["population"]),
        load_country_stats(paths["country_stats"]),
        load_clusters(paths["clusters"]),
        load_households(paths["households"]),
    )


def normalize_per_country(table: FeatureTable) -> FeatureTable:
    """Z-score every feature within each country (population standard deviation).

    Features that are constant within a country map to zero rather than
    erroring; small countries routinely carry constant columns and
    dropping them would desynchronize the feature arity.
    """
    if table.n == 0:
        raise DegenerateInputError("cannot normalize an empty feature table")
    values = np.array(table.values, dtype=float, copy=True)
    norm_stats: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for country, idx in table.country_index().items():
        block = values[idx]
        means = block.mean(axis=0)
        stds = block.std(axis=0)  # population std
        centered = block - means
        safe = np.where(stds > 0.0, stds, 1.0)
        normalized = np.where(stds > 0.0, centered / safe, 0.0)
        values[idx] = normalized
        norm_stats[country] = (means, stds)
    return FeatureTable(
        quadkeys=list(table.quadkeys),
        countries=list(table.countries),
        values=values,
        feature_names=list(table.feature_names),
        norm_stats=norm_stats,
        normalized=True,
    )


def normalize_with_stats(
    table: FeatureTable, norm_stats: dict[str, tuple[np.ndarray, np.ndarray]]
) -> FeatureTable:
    """Apply previously fitted per-country statistics to new rows.

    Rows from a country absent from ``norm_stats`` are a hard error:
    silently passing raw values through a model trained on z-scores
    would produce garbage predictions.
    """
    values = np.array(table.values, dtype=float, copy=True)
    for country, idx in table.country_index().items():
        if country not in norm_stats:
            raise InvalidInputError(
                f"country {country!r} has no fitted normalization statistics"
            )
        means, stds = norm_stats[country]
        safe = np.where(stds > 0.0, stds, 1.0)
        values[idx] = np.where(stds > 0.0, (values[idx] - means) / safe, 0.0)
    return FeatureTable(
        quadkeys=list(table.quadkeys),
        countries=list(table.countries),
        values=values,
        feature_names=list(table.feature_names),
        norm_stats=dict(norm_stats),
        normalized=True,
    )


@dataclass
class PcaModel:
    """Principal components of a data matrix, with the centering/scaling used to fit them."""

    column_means: np.ndarray
    column_scales: np.ndarray
    components: np.ndarray  # (k, d), orthonormal rows
    explained_variance_ratio: np.ndarray
    eigenvalues: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def to_text(self) -> str:
        lines = ["wealthmap-pca v1", f"k {self.k}", f"d {self.components.shape[1]}"]
        lines.append("means " + ",".join(repr(float(v)) for v in self.column_means))
        lines.append("scales " + ",".join(repr(float(v)) for v in self.column_scales))
        lines.append("eigenvalues " + ",".join(repr(float(v)) for v in self.eigenvalues))
        lines.append(
            "evr " + ",".join(repr(float(v)) for v in self.explained_variance_ratio)
        )
        for row in self.components:
            lines.append("component " + ",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PcaModel":
        lines = [ln for ln in text.splitlines() if ln]
        if not lines or lines[0] != "wealthmap-pca v1":
            raise SchemaError("not a wealthmap PCA file")
        fields = {}
        components = []
        for ln in lines[1:]:
            key, _, rest = ln.partition(" ")
            if key == "component":
                components.append([float(v) for v in rest.split(",")])
            else:
                fields[key] = rest
        return cls(
            column_means=np.array([float(v) for v in fields["means"].split(",")]),
            column_scales=np.array([float(v) for v in fields["scales"].split(",")]),
            components=np.array(components, dtype=float),
            explained_variance_ratio=np.array([float(v) for v in fields["evr"].split(",")]),
            eigenvalues=np.array([float(v) for v in fields["eigenvalues"].split(",")]),
        )


def pca_fit(matrix, k: int, scale: bool = False) -> PcaModel:
    """Fit the top-k principal components of ``matrix`` (rows = observations).

    Components come from an eigendecomposition of the covariance matrix,
    with a deterministic sign convention: each component's entry of
    largest magnitude is made positive.
    """
    X = np.asarray(matrix, dtype=float)
    if X.ndim != 2:
        raise InvalidInputError("pca_fit expects a 2-D matrix")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("pca_fit input contains non-finite values")
    n, d = X.shape
    if n < 2:
        raise InvalidInputError(f"pca_fit needs at least 2 rows, got {n}")
    if not 1 <= k <= min(n - 1, d):
        raise InvalidInputError(f"k={k} outside [1, min(n-1, d)] = [1, {min(n - 1, d)}]")
    means = X.mean(axis=0)
    centered = X - means
    if scale:
        stds = X.std(axis=0)  # population std
        scales = np.where(stds > 0.0, stds, 1.0)
        centered = centered / scales
    else:
        scales = np.ones(d)
    if not np.any(centered != 0.0):
        raise DegenerateInputError("all-constant matrix has no principal components")
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = np.clip(eigvals[::-1], 0.0, None)
    eigvecs = eigvecs[:, ::-1]
    total = float(eigvals.sum())
    comps = eigvecs[:, :k].T.copy()
    for row in comps:
        pivot = int(np.argmax(np.abs(row)))
        if row[pivot] < 0:
            row *= -1.0
    return PcaModel(
        column_means=means,
        column_scales=scales,
        components=comps,
        explained_variance_ratio=eigvals[:k] / total,
        eigenvalues=eigvals[:k],
    )


def pca_project(model: PcaModel, rows) -> np.ndarray:
    """Project rows onto the fitted components; returns an (n, k) score matrix."""
    X = np.asarray(rows, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != model.components.shape[1]:
        raise InvalidInputError(
            f"row arity {X.shape[1]} does not match fitted dimension {model.components.shape[1]}"
        )
    scores = ((X - model.column_means) / model.column_scales) @ model.components.T
    return scores[0] if single else scores
