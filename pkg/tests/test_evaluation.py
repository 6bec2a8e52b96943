import numpy as np
import pytest

from wealthmap.evaluation import (
    CvReport,
    basic_kfold_cv,
    cross_country_matrix,
    default_grid,
    grid_search,
    leave_country_out_cv,
    r_squared,
    r_squared_sse,
    run_protocol,
    spatial_cv,
    spatial_folds,
    subset_r_squared,
    univariate_importance,
)
from wealthmap.exceptions import InvalidInputError, UndefinedMetricError
from wealthmap.gbdt import GbdtParams
from wealthmap.tilegrid import haversine_km_arrays
from wealthmap.util import child_rng

FAST = GbdtParams(n_trees=25, learning_rate=0.3, max_depth=3)


def test_r_squared_perfect():
    assert r_squared([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == pytest.approx(1.0)


def test_r_squared_affine_invariance():
    y = np.array([0.3, -1.2, 2.0, 0.7])
    assert r_squared(y, 2.0 * y + 5.0) == pytest.approx(1.0)
    assert r_squared(y, -3.0 * y + 1.0) == pytest.approx(1.0)  # sign-flip symmetric


def test_r_squared_hand_case():
    assert r_squared([0.0, 1.0, 2.0, 3.0], [0.0, 0.0, 1.0, 1.0]) == pytest.approx(0.8)


def test_r_squared_zero_variance_errors():
    with pytest.raises(UndefinedMetricError):
        r_squared([1.0, 1.0, 1.0], [0.0, 1.0, 2.0])
    with pytest.raises(UndefinedMetricError):
        r_squared([0.0, 1.0, 2.0], [1.0, 1.0, 1.0])


def test_r_squared_weighted_hand_case():
    # Duplicating a row is the same as doubling its weight.
    yt = [0.0, 1.0, 2.0, 3.0, 3.0]
    yp = [0.0, 0.0, 1.0, 1.0, 1.0]
    expected = r_squared(yt, yp)
    assert r_squared([0.0, 1.0, 2.0, 3.0], [0.0, 0.0, 1.0, 1.0], weights=[1, 1, 1, 2]) == pytest.approx(expected)


def test_r_squared_sse_differs_for_biased_predictions():
    y = np.array([0.0, 1.0, 2.0, 3.0])
    assert r_squared_sse(y, y + 1.0) < 1.0
    assert r_squared(y, y + 1.0) == pytest.approx(1.0)


def linear_world(rng, n_per_country, countries, noise=0.0, shift=None):
    rows = []
    for ci, c in enumerate(countries):
        x = rng.uniform(-1, 1, size=(n_per_country, 3))
        y = x[:, 0] + noise * rng.normal(size=n_per_country)
        if shift:
            y = y + shift[ci]
        rows.append((x, y, [c] * n_per_country))
    X = np.vstack([r[0] for r in rows])
    y = np.concatenate([r[1] for r in rows])
    cs = sum((r[2] for r in rows), [])
    return X, y, cs


def test_basic_kfold_fold_sizes_and_partition():
    rng = np.random.default_rng(0)
    X, y, cs = linear_world(rng, 100, ["AA"])
    report = basic_kfold_cv(X, y, cs, FAST, k=5, seed=3)
    sizes = [f.n_test for f in report.folds]
    assert sizes == [20, 20, 20, 20, 20]
    assert np.all(report.oos_count == 1)  # disjoint and exhaustive


def test_basic_kfold_seed_determinism():
    rng = np.random.default_rng(1)
    X, y, cs = linear_world(rng, 40, ["AA", "BB"])
    a = basic_kfold_cv(X, y, cs, FAST, k=4, seed=9)
    b = basic_kfold_cv(X, y, cs, FAST, k=4, seed=9)
    assert np.array_equal(a.oos_pred, b.oos_pred)
    assert [f.r2 for f in a.folds] == [f.r2 for f in b.folds]
    c = basic_kfold_cv(X, y, cs, FAST, k=4, seed=10)
    assert not np.array_equal(a.oos_pred, c.oos_pred)


def test_basic_kfold_thread_count_independent():
    rng = np.random.default_rng(2)
    X, y, cs = linear_world(rng, 30, ["AA", "BB"])
    a = basic_kfold_cv(X, y, cs, FAST, k=3, seed=1, threads=1)
    b = basic_kfold_cv(X, y, cs, FAST, k=3, seed=1, threads=4)
    assert np.array_equal(a.oos_pred, b.oos_pred)


def test_basic_kfold_learnable_target():
    rng = np.random.default_rng(3)
    X, y, cs = linear_world(rng, 200, ["AA"])
    params = GbdtParams(n_trees=120, learning_rate=0.2, max_depth=6)
    report = basic_kfold_cv(X, y, cs, params, k=5, seed=0)
    assert report.mean_country_r2() >= 0.99


def test_basic_kfold_too_few_rows():
    with pytest.raises(InvalidInputError):
        basic_kfold_cv(np.ones((3, 1)), np.arange(3.0), ["AA"] * 3, FAST, k=5)


def test_leave_country_out_two_folds():
    rng = np.random.default_rng(4)
    X, y, cs = linear_world(rng, 60, ["AA", "BB"], noise=0.05)
    report = leave_country_out_cv(X, y, cs, FAST)
    assert len(report.folds) == 2
    assert {f.country for f in report.folds} == {"AA", "BB"}
    assert np.all(report.oos_count == 1)


def test_leave_country_out_requires_two_countries():
    with pytest.raises(InvalidInputError):
        leave_country_out_cv(np.ones((4, 1)), np.arange(4.0), ["AA"] * 4, FAST)


def test_leave_country_out_mean_shift_invariant():
    rng = np.random.default_rng(5)
    X0, y0, cs0 = linear_world(np.random.default_rng(5), 80, ["AA", "BB"], noise=0.05)
    X1, y1, cs1 = linear_world(np.random.default_rng(5), 80, ["AA", "BB"], noise=0.05, shift=[0.0, 7.0])
    a = leave_country_out_cv(X0, y0, cs0, FAST)
    b = leave_country_out_cv(X1, y1, cs1, FAST)
    # Shifting one country's label mean does not move correlation-based R^2.
    assert b.per_country["BB"] == pytest.approx(a.per_country["BB"], abs=1e-9)


def test_spatial_folds_sizes():
    rng = child_rng(7, "t")
    lats = np.linspace(0, 1, 100)
    lons = np.zeros(100)
    folds = spatial_folds(lats, lons, 5, rng)
    assert len(folds) == 5
    for tr, te in folds:
        assert len(tr) == 80 and len(te) == 20
        assert len(np.intersect1d(tr, te)) == 0


def test_spatial_fold_contiguity_and_anchor_in_train():
    rng = np.random.default_rng(8)
    lats = rng.uniform(-2, 2, 60)
    lons = rng.uniform(10, 14, 60)
    gen = child_rng(3, "spatial", "AA")
    anchors = child_rng(3, "spatial", "AA").choice(60, size=4, replace=False)
    folds = spatial_folds(lats, lons, 4, gen)
    for (tr, te), anchor in zip(folds, anchors):
        assert anchor in tr
        d = haversine_km_arrays(lats[anchor], lons[anchor], lats, lons)
        assert d[tr].max() <= d[te].min() + 1e-12


def test_spatial_cv_handles_duplicate_centroids():
    rng = np.random.default_rng(9)
    X, y, cs = linear_world(rng, 40, ["AA"])
    lats = np.repeat(np.arange(8.0), 5)
    lons = np.zeros(40)
    report = spatial_cv(X, y, cs, lats, lons, FAST, k=4, seed=2)
    assert len(report.folds) == 4


def test_spatial_cv_beats_leakage_detection():
    # Label = smooth spatial field + feature signal. Interleaved test points
    # let the model exploit the field through feature-space neighbors;
    # spatially blocked folds take that away.
    rng = np.random.default_rng(10)
    n = 240
    lats = rng.uniform(0, 4, n)
    lons = rng.uniform(0, 4, n)
    spatial_field = np.sin(1.7 * lats) * np.cos(1.3 * lons)
    X = np.column_stack([
        np.sin(1.7 * lats) + 0.05 * rng.normal(size=n),
        np.cos(1.3 * lons) + 0.05 * rng.normal(size=n),
        rng.normal(size=n),
    ])
    y = 2.0 * spatial_field + 0.3 * rng.normal(size=n)
    cs = ["AA"] * n
    params = GbdtParams(n_trees=60, learning_rate=0.2, max_depth=5)
    basic = basic_kfold_cv(X, y, cs, params, k=5, seed=1)
    spatial = spatial_cv(X, y, cs, lats, lons, params, k=5, seed=1)
    assert basic.mean_country_r2() > spatial.mean_country_r2()


def test_run_protocol_dispatch():
    rng = np.random.default_rng(11)
    X, y, cs = linear_world(rng, 30, ["AA", "BB"])
    with pytest.raises(InvalidInputError):
        run_protocol("nope", X, y, cs, FAST)
    with pytest.raises(InvalidInputError):
        run_protocol("spatial", X, y, cs, FAST)  # missing centroids


def test_default_grid_is_the_full_35():
    grid = default_grid()
    assert len(grid) == 35
    assert grid[0] == (1, 1.0)
    assert (30, 10.0) in grid


def test_grid_search_single_point():
    rng = np.random.default_rng(12)
    X, y, cs = linear_world(rng, 40, ["AA"])
    best, report, rows = grid_search(
        X, y, cs, protocol="basic_kfold", grid=[(3, 1.0)], base=FAST, k=4, seed=0
    )
    assert (best.max_depth, best.min_child_weight) == (3, 1.0)
    assert len(rows) == 1


def test_grid_search_selects_min_mse_and_tiebreaks_small_depth():
    rng = np.random.default_rng(13)
    # Piecewise-constant 2-region target: depth 1 fits it exactly, so all
    # depths tie and the tie-break must pick the smallest.
    x = np.linspace(-1, 1, 60)[:, None]
    y = np.where(x[:, 0] < 0, -1.0, 1.0)
    cs = ["AA"] * 60
    base = GbdtParams(n_trees=3, learning_rate=1.0)
    best, report, rows = grid_search(
        X=x, y=y, countries=cs, protocol="basic_kfold",
        grid=[(1, 1.0), (30, 1.0)], base=base, k=3, seed=5,
    )
    assert best.max_depth == 1
    # Re-evaluating any grid point never yields a lower MSE than the winner.
    for row in rows:
        assert report.pooled_mse <= row.cv_mse + 1e-12


def test_univariate_importance_hand_cases():
    rng = np.random.default_rng(14)
    n = 50
    y = rng.normal(size=n)
    z = rng.normal(size=n)
    yc = y - y.mean()
    orthogonal = z - (z - z.mean()) @ yc / (yc @ yc) * yc  # exactly uncorrelated with y
    X = np.column_stack([y, -y, np.full(n, 3.0), orthogonal])
    rows = univariate_importance(X, y, ["AA"] * n, ["same", "neg", "const", "orth"])
    vals = {name: v for _, name, v in rows}
    assert vals["same"] == pytest.approx(1.0)
    assert vals["neg"] == pytest.approx(1.0)
    assert vals["const"] == 0.0
    assert vals["orth"] == pytest.approx(0.0, abs=1e-12)


def test_univariate_importance_constant_label_errors():
    with pytest.raises(UndefinedMetricError):
        univariate_importance(np.ones((5, 2)), np.ones(5), ["AA"] * 5, ["a", "b"])


def test_cross_country_matrix_cloned_countries():
    rng = np.random.default_rng(15)
    x = rng.uniform(-1, 1, size=(80, 2))
    y = x[:, 0] + 0.05 * rng.normal(size=80)
    X = np.vstack([x, x])
    yy = np.concatenate([y, y])
    cs = ["AA"] * 80 + ["BB"] * 80
    names, r2, mse = cross_country_matrix(X, yy, cs, FAST, k=4, seed=0)
    assert names == ["AA", "BB"]
    assert r2[0, 1] == pytest.approx(r2[1, 0], abs=1e-9)  # identical data both ways
    assert np.all(r2 >= 0.0)  # squared correlation is nonnegative by definition
    diag = basic_kfold_cv(x, y, ["AA"] * 80, FAST, k=4, seed=0)
    assert r2[0, 0] == pytest.approx(diag.per_country["AA"])


def test_subset_r_squared_perfect_partition():
    y = np.array([0.0, 1.0, 2.0, 3.0])
    out = subset_r_squared(y, y, ["u", "u", "r", "r"])
    assert out.per_group == {"r": pytest.approx(1.0), "u": pytest.approx(1.0)}
    assert out.pooled == pytest.approx(1.0)


def test_subset_r_squared_degenerate_groups_surface():
    y = np.array([0.0, 1.0, 10.0, 11.0])
    pred = np.array([0.5, 0.5, 10.5, 10.5])  # constant within each group
    out = subset_r_squared(y, pred, ["a", "a", "b", "b"])
    assert out.per_group["a"] is None
    assert out.per_group["b"] is None
    assert out.pooled > 0.9


def test_subset_r_squared_group_mean_only_prediction():
    rng = np.random.default_rng(16)
    n = 200
    groups = np.where(np.arange(n) < n // 2, "a", "b")
    offsets = np.where(groups == "a", 0.0, 5.0)
    y = offsets + rng.normal(size=n)
    yc_a = y[: n // 2] - y[: n // 2].mean()
    yc_b = y[n // 2 :] - y[n // 2 :].mean()
    noise = rng.normal(size=n)
    # Orthogonalize the within-group prediction noise against y within groups.
    na = noise[: n // 2] - (noise[: n // 2] @ yc_a) / (yc_a @ yc_a) * yc_a
    nb = noise[n // 2 :] - (noise[n // 2 :] @ yc_b) / (yc_b @ yc_b) * yc_b
    pred = offsets + 0.01 * np.concatenate([na, nb])
    out = subset_r_squared(y, pred, groups)
    assert out.pooled > 0.5
    assert out.per_group["a"] == pytest.approx(0.0, abs=1e-12)
    assert out.per_group["b"] == pytest.approx(0.0, abs=1e-12)


def test_subset_r_squared_undersized_group_skipped():
    y = np.array([0.0, 1.0, 2.0, 3.0])
    out = subset_r_squared(y, y, ["a", "a", "a", "lone"])
    assert out.skipped == ["lone"]
    assert "lone" not in out.per_group
