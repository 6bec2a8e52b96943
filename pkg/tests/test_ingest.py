import math

import numpy as np
import pytest

from wealthmap.csvio import write_csv
from wealthmap.exceptions import DegenerateInputError, InvalidInputError, SchemaError
from wealthmap.ingest import (
    FEATURE_COLUMNS,
    FeatureTable,
    PcaModel,
    load_features,
    load_population,
    normalize_per_country,
    normalize_with_stats,
    pca_fit,
    pca_project,
)


def make_feature_csv(path, rows):
    """rows: list of (quadkey, country, first_feature_value); other features zero."""
    header = ["quadkey", "country"] + FEATURE_COLUMNS
    out = []
    for qk, country, v in rows:
        out.append([qk, country, v] + [0.0] * (len(FEATURE_COLUMNS) - 1))
    write_csv(str(path), header, out)


QK = [
    "02222222222222",
    "02222222222223",
    "02222222222220",
    "02222222222221",
]


def test_load_empty_file_with_header(tmp_path):
    p = tmp_path / "features.csv"
    make_feature_csv(p, [])
    table = load_features(str(p))
    assert table.n == 0


def test_load_preserves_row_order(tmp_path):
    p = tmp_path / "features.csv"
    make_feature_csv(p, [(QK[0], "AA", 1.0), (QK[1], "AA", 2.0), (QK[2], "BB", 3.0)])
    table = load_features(str(p))
    assert table.quadkeys == [QK[0], QK[1], QK[2]]
    assert list(table.values[:, 0]) == [1.0, 2.0, 3.0]


def test_load_rejects_short_quadkey(tmp_path):
    p = tmp_path / "features.csv"
    make_feature_csv(p, [("0222", "AA", 1.0)])
    with pytest.raises(SchemaError, match="row 1"):
        load_features(str(p))


def test_load_rejects_duplicate_quadkey(tmp_path):
    p = tmp_path / "features.csv"
    make_feature_csv(p, [(QK[0], "AA", 1.0), (QK[0], "AA", 2.0)])
    with pytest.raises(SchemaError, match="duplicate"):
        load_features(str(p))


def test_load_rejects_non_numeric(tmp_path):
    p = tmp_path / "features.csv"
    make_feature_csv(p, [(QK[0], "AA", "abc")])
    with pytest.raises(SchemaError, match="road_density"):
        load_features(str(p))


def test_load_population_rejects_negative(tmp_path):
    p = tmp_path / "population.csv"
    write_csv(str(p), ["quadkey", "population"], [[QK[0], -4.0]])
    with pytest.raises(SchemaError, match="negative"):
        load_population(str(p))


def test_load_tables_wrapper(small_world):
    from wealthmap.ingest import load_tables

    w = small_world["world"]
    features, population, stats, clusters, households = load_tables({
        "features": str(w / "features.csv"),
        "population": str(w / "population.csv"),
        "country_stats": str(w / "country_stats.csv"),
        "clusters": str(w / "clusters.csv"),
        "households": str(w / "households.csv"),
    })
    assert features.n == len(population)
    assert set(features.countries) <= set(stats)
    cluster_ids = {c.cluster_id for c in clusters}
    assert all(h.cluster_id in cluster_ids for h in households)


def test_load_admin_assignment_duplicate_within_level(tmp_path):
    from wealthmap.ingest import load_admin_assignment

    p = tmp_path / "admin.csv"
    qk = QK[0]
    write_csv(str(p), ["quadkey", "level", "unit_id"], [[qk, "a", "u1"], [qk, "a", "u2"]])
    with pytest.raises(SchemaError, match="duplicate"):
        load_admin_assignment(str(p))
    write_csv(str(p), ["quadkey", "level", "unit_id"], [[qk, "a", "u1"], [qk, "b", "u2"]])
    levels = load_admin_assignment(str(p))
    assert levels["a"][qk] == "u1" and levels["b"][qk] == "u2"


def simple_table(countries, first_col):
    n = len(countries)
    values = np.zeros((n, 3))
    values[:, 0] = first_col
    values[:, 1] = 7.0  # constant everywhere
    values[:, 2] = np.arange(n, dtype=float)
    return FeatureTable(
        quadkeys=[f"qk{i}" for i in range(n)],
        countries=list(countries),
        values=values,
        feature_names=["a", "b", "c"],
    )


def test_normalize_zscores_population_std():
    table = simple_table(["AA", "AA", "AA"], [1.0, 2.0, 3.0])
    out = normalize_per_country(table)
    expected = (np.array([1.0, 2.0, 3.0]) - 2.0) / math.sqrt(2.0 / 3.0)
    assert np.allclose(out.values[:, 0], expected)
    assert out.values[0, 0] == pytest.approx(-1.2247, abs=1e-4)


def test_normalize_constant_feature_maps_to_zero():
    table = simple_table(["AA", "AA"], [1.0, 2.0])
    out = normalize_per_country(table)
    assert np.all(out.values[:, 1] == 0.0)


def test_normalize_per_country_independence():
    table = simple_table(["AA", "AA", "BB", "BB"], [1.0, 5.0, 1.0, 5.0])
    out = normalize_per_country(table)
    assert np.allclose(out.values[:2, 0], out.values[2:, 0])


def test_normalize_idempotent():
    rng = np.random.default_rng(0)
    table = simple_table(["AA", "AA", "BB", "BB", "BB"], rng.normal(size=5))
    table.values[:, 2] = rng.normal(size=5)
    once = normalize_per_country(table)
    twice = normalize_per_country(once)
    assert np.allclose(once.values, twice.values, atol=1e-9)


def test_normalize_with_stats_unknown_country():
    table = simple_table(["AA", "AA"], [1.0, 2.0])
    out = normalize_per_country(table)
    newcomer = simple_table(["CC", "CC"], [1.0, 2.0])
    with pytest.raises(InvalidInputError, match="CC"):
        normalize_with_stats(newcomer, out.norm_stats)


def test_normalize_with_stats_matches_fit():
    table = simple_table(["AA", "AA", "AA"], [1.0, 2.0, 4.0])
    fitted = normalize_per_country(table)
    again = normalize_with_stats(table, fitted.norm_stats)
    assert np.allclose(fitted.values, again.values)


def test_pca_collinear_points_single_component():
    t = np.linspace(-1, 1, 9)
    X = np.stack([t, 2.0 * t], axis=1)
    model = pca_fit(X, k=1)
    assert model.explained_variance_ratio[0] == pytest.approx(1.0, abs=1e-12)


def test_pca_symmetric_cross_splits_evenly():
    X = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    model = pca_fit(X, k=2)
    assert np.allclose(model.explained_variance_ratio, [0.5, 0.5], atol=1e-12)


def test_pca_k_bounds():
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(InvalidInputError):
        pca_fit(X, k=2)  # k must be <= n-1
    with pytest.raises(InvalidInputError):
        pca_fit(X, k=0)


def test_pca_all_constant_is_degenerate():
    X = np.full((5, 3), 2.5)
    with pytest.raises(DegenerateInputError):
        pca_fit(X, k=1)


def test_pca_reconstruction_full_rank():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(40, 6))
    model = pca_fit(X, k=6)
    scores = pca_project(model, X)
    reconstructed = scores @ model.components + model.column_means
    assert np.allclose(reconstructed, X, atol=1e-6)


def test_pca_score_variance_equals_eigenvalue():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(60, 5)) @ np.diag([3.0, 2.0, 1.0, 0.5, 0.1])
    model = pca_fit(X, k=5)
    scores = pca_project(model, X)
    assert np.allclose(scores.var(axis=0, ddof=1), model.eigenvalues, atol=1e-6)


def test_pca_ratios_sum_to_one_and_nonincreasing():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(30, 8))
    model = pca_fit(X, k=8)
    assert model.explained_variance_ratio.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(np.diff(model.explained_variance_ratio) <= 1e-12)
    # cumulative ratio is monotone nondecreasing in k
    assert np.all(np.diff(np.cumsum(model.explained_variance_ratio)) >= -1e-12)


def test_pca_orthonormal_components():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(50, 7))
    model = pca_fit(X, k=4)
    gram = model.components @ model.components.T
    assert np.allclose(gram, np.eye(4), atol=1e-8)


def test_pca_deterministic_sign():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(25, 4))
    a = pca_fit(X, k=3)
    b = pca_fit(X.copy(), k=3)
    assert np.allclose(a.components, b.components)
    for row in a.components:
        assert row[np.argmax(np.abs(row))] > 0


def test_pca_text_roundtrip():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(20, 5))
    model = pca_fit(X, k=3, scale=True)
    restored = PcaModel.from_text(model.to_text())
    assert np.array_equal(restored.components, model.components)
    assert np.array_equal(restored.column_means, model.column_means)
    assert np.array_equal(restored.column_scales, model.column_scales)
    probe = rng.normal(size=(4, 5))
    assert np.array_equal(pca_project(restored, probe), pca_project(model, probe))
