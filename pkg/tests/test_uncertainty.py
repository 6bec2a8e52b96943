import math

import numpy as np
import pytest

from wealthmap.awe import CountryStats
from wealthmap.exceptions import DegenerateInputError, InvalidInputError
from wealthmap.tilegrid import EARTH_RADIUS_KM, LatLon, haversine_km
from wealthmap.uncertainty import (
    ClusterIndex,
    CountryAttributes,
    build_error_predictors,
    cosine_dissimilarity_matrix,
    country_error_summary,
    dissimilarity_curve,
    fit_least_squares,
    predict_error,
)

KM_PER_DEG = math.pi / 180.0 * EARTH_RADIUS_KM


def test_index_nearest_and_counts_match_brute_force():
    rng = np.random.default_rng(0)
    lats = rng.uniform(-60, 60, 80)
    lons = rng.uniform(-180, 180, 80)
    index = ClusterIndex(lats, lons, cell_deg=2.0)
    for _ in range(40):
        qlat = float(rng.uniform(-60, 60))
        qlon = float(rng.uniform(-180, 180))
        d = np.array(
            [haversine_km(LatLon(qlat, qlon), LatLon(la, lo)) for la, lo in zip(lats, lons)]
        )
        assert index.nearest(qlat, qlon) == pytest.approx(d.min(), rel=1e-12, abs=1e-9)
        for r in (50.0, 400.0, 2500.0):
            assert index.count_within(qlat, qlon, r) == int(np.sum(d <= r))


def test_index_predicate_filters_countries():
    lats = [0.0, 0.0, 0.0]
    lons = [0.0, 1.0, 2.0]
    index = ClusterIndex(lats, lons, countries=["AA", "AA", "BB"])
    # nearest foreign point from (0, 0) skips the AA points
    d = index.nearest(0.0, 0.0, predicate=lambda c: c != "AA")
    assert d == pytest.approx(2.0 * KM_PER_DEG, rel=1e-9)
    assert index.nearest(0.0, 0.0, predicate=lambda c: c == "ZZ") == math.inf


def test_index_empty_rejected():
    with pytest.raises(DegenerateInputError):
        ClusterIndex([], [])


def make_attrs(**over):
    base = dict(
        iso2="AA", area_km2=1000.0, population=1e6, island=False, landlocked=False,
        continent="africa", n_survey_neighbors=2.0, dist_closest_survey_km=0.0,
    )
    base.update(over)
    return CountryAttributes(**base)


SCALAR_NAMES = [
    "road_density", "urban_builtup", "elevation", "slope", "precipitation",
    "population", "cell_towers", "wifi_points", "mobile_devices",
    "android_devices", "ios_devices", "radiance",
]


def build_simple(lats, lons, countries, index, scalars=None):
    n = len(lats)
    scalars = scalars if scalars is not None else np.zeros((n, 12))
    stats = {c: CountryStats(c, gdp_pc=1000.0, gini=0.4) for c in set(countries)}
    attrs = {c: make_attrs(iso2=c) for c in set(countries)}
    return build_error_predictors(
        lats, lons, countries, scalars, SCALAR_NAMES, index, stats, attrs
    )


def test_distance_predictors_at_cluster_location():
    index = ClusterIndex([0.0, 5.0], [0.0, 5.0], countries=["AA", "BB"])
    out = build_simple([0.0], [0.0], ["AA"], index)
    cols = dict(zip(out.names, out.matrix[0]))
    assert cols["ln_dist_closest_cluster"] == 0.0  # ln(1 + 0)
    assert cols["ln_dist_closest_survey_country"] == pytest.approx(
        math.log1p(haversine_km(LatLon(0, 0), LatLon(5, 5)))
    )


def test_radius_counts_forty_and_sixty_km():
    d40 = 40.0 / KM_PER_DEG
    d60 = 60.0 / KM_PER_DEG
    index = ClusterIndex([0.0, 0.0, 40.0], [d40, d60, 40.0], countries=["AA", "AA", "BB"])
    out = build_simple([0.0], [0.0], ["AA"], index)
    cols = dict(zip(out.names, out.matrix[0]))
    assert cols["ln_clusters_50km"] == pytest.approx(math.log1p(1))
    assert cols["ln_clusters_250km"] == pytest.approx(math.log1p(2))
    assert cols["ln_clusters_500km"] == pytest.approx(math.log1p(2))
    assert cols["ln_clusters_1000km"] == pytest.approx(math.log1p(2))


def test_zero_clusters_within_radius_maps_to_zero():
    index = ClusterIndex([0.0, 40.0], [30.0, 40.0], countries=["AA", "BB"])
    out = build_simple([0.0], [0.0], ["AA"], index)
    cols = dict(zip(out.names, out.matrix[0]))
    assert cols["ln_clusters_50km"] == 0.0  # ln(1 + 0)


def test_single_country_clusters_degenerate():
    index = ClusterIndex([0.0], [0.0], countries=["AA"])
    with pytest.raises(DegenerateInputError):
        build_simple([0.0], [0.0], ["AA"], index)


def test_specification_subsets():
    index = ClusterIndex([0.0, 5.0], [0.0, 5.0], countries=["AA", "BB"])
    n = 3
    lats, lons, countries = [0.0, 1.0, 2.0], [0.0, 1.0, 2.0], ["AA", "AA", "AA"]
    scalars = np.arange(n * 12, dtype=float).reshape(n, 12)
    stats = {"AA": CountryStats("AA", 1000.0, 0.4)}
    attrs = {"AA": make_attrs()}
    base = build_error_predictors(lats, lons, countries, scalars, SCALAR_NAMES, index, stats, attrs)
    no_rwi = build_error_predictors(
        lats, lons, countries, scalars, SCALAR_NAMES, index, stats, attrs, specification="no_rwi"
    )
    img = np.ones((n, 4))
    imagery = build_error_predictors(
        lats, lons, countries, scalars, SCALAR_NAMES, index, stats, attrs,
        specification="imagery", image_features=img, image_names=["i0", "i1", "i2", "i3"],
    )
    assert len(base.names) == 16 + 12
    assert len(no_rwi.names) == 16
    assert len(imagery.names) == len(base.names) + 4
    assert "ln_tile_population" in base.names and "ln_tile_population" not in no_rwi.names
    # negative elevation clamps before the log transform
    scalars_neg = scalars.copy()
    scalars_neg[:, SCALAR_NAMES.index("elevation")] = -24.0
    clamped = build_error_predictors(
        lats, lons, countries, scalars_neg, SCALAR_NAMES, index, stats, attrs
    )
    col = clamped.names.index("ln_elevation")
    assert np.all(clamped.matrix[:, col] == 0.0)


def test_least_squares_exact_fit():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 3))
    beta = np.array([1.5, -2.0, 0.5])
    y = X @ beta + 4.0
    model = fit_least_squares(y, X)
    assert np.allclose(model.beta[:-1], beta, atol=1e-9)
    assert model.beta[-1] == pytest.approx(4.0)
    assert model.r2 == pytest.approx(1.0)
    assert np.max(np.abs(y - X @ model.beta[:-1] - model.beta[-1])) <= 1e-9


def test_least_squares_intercept_only():
    y = np.array([1.0, 2.0, 6.0])
    model = fit_least_squares(y, np.empty((3, 0)))
    assert model.beta[-1] == pytest.approx(y.mean())


def test_least_squares_residual_orthogonality():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(200, 5))
    y = X @ rng.normal(size=5) + rng.normal(size=200)
    model = fit_least_squares(y, X)
    resid = y - X @ model.beta[:-1] - model.beta[-1]
    for j in range(5):
        bound = 1e-6 * np.linalg.norm(y) * np.linalg.norm(X[:, j])
        assert abs(resid @ X[:, j]) <= bound


def test_least_squares_weighted_matches_replication():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0.0, 1.1, 1.9, 3.2])
    w = np.array([1.0, 2.0, 1.0, 1.0])
    weighted = fit_least_squares(y, X, weights=w)
    X_rep = np.array([[0.0], [1.0], [1.0], [2.0], [3.0]])
    y_rep = np.array([0.0, 1.1, 1.1, 1.9, 3.2])
    replicated = fit_least_squares(y_rep, X_rep)
    assert np.allclose(weighted.beta, replicated.beta)


def test_least_squares_rank_deficient_warns_minimal_norm():
    rng = np.random.default_rng(3)
    x = rng.normal(size=40)
    X = np.column_stack([x, 2.0 * x])  # perfectly collinear
    y = 3.0 * x + rng.normal(size=40) * 0.01
    model = fit_least_squares(y, X)
    assert model.rank_deficient
    # minimal-norm solution across the collinear pair is deterministic
    again = fit_least_squares(y, X)
    assert np.array_equal(model.beta, again.beta)


def test_planted_coefficients_recovered_within_3se():
    rng = np.random.default_rng(7)
    n, p = 4000, 8
    X = rng.normal(size=(n, p))
    beta = rng.normal(size=p)
    y = X @ beta + 1.0 + rng.normal(size=n)
    model = fit_least_squares(y, X)
    err = np.abs(model.beta[:-1] - beta)
    assert np.all(err <= 3.0 * model.standard_errors[:-1])


def test_predict_error_clamps_and_is_linear():
    from wealthmap.uncertainty import LinearErrorModel

    lin = LinearErrorModel(
        predictor_names=["x", "constant"], beta=np.array([0.1, 0.0]),
        standard_errors=np.zeros(2), r2=1.0, n=4,
    )
    out = predict_error(lin, np.array([[1.0], [3.0], [-5.0]]))
    assert out[1] - out[0] == pytest.approx(0.2)
    assert out[2] == 0.0  # -0.5 clamps to zero
    with pytest.raises(InvalidInputError):
        predict_error(lin, np.ones((2, 3)))


def test_country_summary_hand_case():
    rows = country_error_summary(
        [1.0, 2.0, 3.0, 0.5], ["AA", "AA", "AA", "BB"],
        squared_residuals=[0.3, 0.5], residual_countries=["AA", "AA"],
    )
    by = {r.country: r for r in rows}
    assert by["AA"].err_mean == pytest.approx(2.0)
    assert by["AA"].err_median == pytest.approx(2.0)
    assert by["AA"].err_sd == pytest.approx(0.8165, abs=1e-4)  # population sd
    assert by["AA"].mse_mean == pytest.approx(0.4)
    assert by["BB"].err_sd == 0.0
    assert by["BB"].mse_mean is None  # no ground truth there


def test_cosine_dissimilarity_reference_points():
    # Columns already have mean 0 and unit variance, so standardization is
    # the identity: row geometry carries through. Identical -> 0,
    # orthogonal -> 1, antipodal -> 2.
    A = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
    D = cosine_dissimilarity_matrix(A)
    assert D[0, 1] == pytest.approx(2.0, abs=1e-12)  # antipodal
    assert D[0, 2] == pytest.approx(1.0, abs=1e-12)  # orthogonal
    assert np.allclose(D, D.T)
    assert np.all(np.diag(D) == 0.0)


def test_cosine_dissimilarity_identical_rows():
    A = np.array([[3.0, 5.0], [3.0, 5.0], [0.0, -1.0], [6.0, 2.0]])
    D = cosine_dissimilarity_matrix(A)
    assert D[0, 1] == pytest.approx(0.0, abs=1e-12)


def test_specification_stability_rank_correlation():
    from wealthmap.uncertainty import specification_stability

    countries = ["AA"] * 3 + ["BB"] * 3 + ["CC"] * 3
    base = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
    assert specification_stability(base, base, countries) == pytest.approx(1.0)
    flipped = base[6:] + base[3:6] + base[:3]  # reverses the country ordering
    assert specification_stability(base, flipped, countries) == pytest.approx(-1.0)
    with pytest.raises(InvalidInputError):
        specification_stability([0.1], [0.2], ["AA"])


def test_dissimilarity_curve_skips_uncovered_countries():
    names = ["AA", "BB", "CC"]
    A = np.array([[0.0, 0.0], [0.0, 0.1], [5.0, 5.0]])
    E = np.full((3, 3), 0.5)
    points, skipped = dissimilarity_curve(names, A, E, n_deciles=4)
    assert len(points) == 4
    assert points[0].n_countries == 3
    # at high thresholds AA and BB only have each other (similar), so they drop
    assert points[-1].n_countries < 3 or skipped
    for p in points:
        if p.n_countries:
            assert p.mean_error == pytest.approx(0.5)
