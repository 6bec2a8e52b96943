import math

import numpy as np
import pytest

from wealthmap.awe import (
    CountryStats,
    IcdfSpec,
    export_distribution,
    icdf_eval,
    icdf_params,
    normal_cdf,
    probit,
    rwi_to_awe,
)
from wealthmap.exceptions import InvalidInputError

REFERENCE_QUANTILES = [
    0.001, 0.005, 0.01, 0.025, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5,
    0.6, 0.7, 0.8, 0.85, 0.9, 0.95, 0.975, 0.99, 0.995, 0.999,
]


def erf_maclaurin(x: float, terms: int = 140) -> float:
    """Series oracle, independent of math.erf: 2/sqrt(pi) sum (-1)^n x^(2n+1)/(n!(2n+1))."""
    parts = []
    for n in range(terms):
        parts.append((-1.0) ** n * x ** (2 * n + 1) / (math.factorial(n) * (2 * n + 1)))
    return 2.0 / math.sqrt(math.pi) * math.fsum(parts)


def oracle_probit(q: float) -> float:
    lo, hi = -10.0, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * (1.0 + erf_maclaurin(mid / math.sqrt(2.0))) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_probit_against_series_oracle():
    assert len(REFERENCE_QUANTILES) == 21
    for q in REFERENCE_QUANTILES:
        assert abs(probit(q) - oracle_probit(q)) <= 1e-9


def test_probit_median_is_exactly_zero():
    assert probit(0.5) == 0.0


def test_probit_symmetry_and_cdf_roundtrip():
    for q in (0.01, 0.2, 0.37, 0.77, 0.999):
        assert probit(q) == pytest.approx(-probit(1.0 - q), abs=1e-12)
        assert normal_cdf(probit(q)) == pytest.approx(q, abs=1e-13)


def test_probit_domain():
    for bad in (0.0, 1.0, -0.1, 1.1):
        with pytest.raises(InvalidInputError):
            probit(bad)


def test_country_stats_validation():
    with pytest.raises(InvalidInputError):
        CountryStats("XX", gdp_pc=-1.0, gini=0.4)
    with pytest.raises(InvalidInputError):
        CountryStats("XX", gdp_pc=100.0, gini=1.2)
    with pytest.raises(InvalidInputError):
        CountryStats("XX", gdp_pc=100.0, gini=0.0)


def test_alpha_and_switch_for_gini_half():
    spec = icdf_params(CountryStats("XX", gdp_pc=1000.0, gini=0.5))
    assert spec.alpha == pytest.approx(1.5)
    assert spec.switch_quantile == pytest.approx(1.0 / 3.0)


def test_togo_alpha():
    spec = icdf_params(CountryStats("TG", gdp_pc=671.84, gini=0.431))
    assert spec.alpha == pytest.approx(1.431 / 0.862, abs=1e-12)
    assert spec.alpha == pytest.approx(1.6601, abs=1e-4)


def test_sigma_vanishes_with_gini():
    sigmas = [icdf_params(CountryStats("XX", 1000.0, g)).sigma for g in (0.1, 0.01, 1e-4, 1e-8)]
    assert all(s > 0 for s in sigmas)
    assert sigmas[-1] < 1e-7
    assert np.all(np.diff(sigmas) < 0)


def test_alpha_strictly_decreasing_to_one():
    ginis = np.linspace(0.01, 0.999, 200)
    alphas = [(1 + g) / (2 * g) for g in ginis]
    assert np.all(np.diff(alphas) < 0)
    assert icdf_params(CountryStats("XX", 1.0, 0.999999)).alpha == pytest.approx(1.0, abs=1e-5)


def test_icdf_monotone_and_continuous_at_switch():
    for gini in (0.25, 0.431, 0.5, 0.63):
        spec = icdf_params(CountryStats("XX", gdp_pc=2500.0, gini=gini))
        grid = np.linspace(0.0005, 0.9995, 1000)
        vals = np.array([icdf_eval(spec, q) for q in grid])
        assert np.all(np.diff(vals) > 0.0)
        qs = spec.switch_quantile
        below = icdf_eval(spec, qs * (1.0 - 1e-12))
        above = icdf_eval(spec, min(qs * (1.0 + 1e-12), 1.0 - 1e-15))
        assert abs(above - below) <= 1e-9 * abs(below)


def test_icdf_degenerate_sigma_constant_branch():
    spec = IcdfSpec(alpha=2.0, sigma=0.0, mu=math.log(500.0), switch_quantile=0.9, pareto_scale=1.0)
    for q in (0.1, 0.5, 0.89):
        assert icdf_eval(spec, q) == pytest.approx(500.0)


def test_icdf_rejects_boundary_quantiles():
    spec = icdf_params(CountryStats("XX", 1000.0, 0.4))
    for bad in (0.0, 1.0):
        with pytest.raises(InvalidInputError):
            icdf_eval(spec, bad)


def test_awe_single_tile_equals_gdp():
    stats = CountryStats("XX", gdp_pc=1234.5, gini=0.42)
    awe, q = rwi_to_awe([0.7], stats)
    assert awe[0] == pytest.approx(1234.5)
    assert q[0] == pytest.approx(0.5)


def test_awe_mean_equals_gdp():
    rng = np.random.default_rng(0)
    stats = CountryStats("XX", gdp_pc=987.0, gini=0.38)
    for n in (2, 10, 500):
        awe, _ = rwi_to_awe(rng.normal(size=n), stats)
        assert np.mean(awe) == pytest.approx(987.0, rel=1e-9)


def test_awe_rank_monotone_and_ties_share_value():
    stats = CountryStats("XX", gdp_pc=500.0, gini=0.5)
    rwi = np.array([0.1, 0.5, 0.5, -1.0, 2.0])
    awe, _ = rwi_to_awe(rwi, stats)
    assert awe[1] == awe[2]
    order = np.argsort(rwi)
    assert np.all(np.diff(awe[order]) >= 0.0)
    assert awe[np.argmax(rwi)] == awe.max()
    assert awe[np.argmin(rwi)] == awe.min()


def test_awe_invariant_under_monotone_transform():
    rng = np.random.default_rng(1)
    stats = CountryStats("XX", gdp_pc=1500.0, gini=0.45)
    rwi = rng.normal(size=40)
    a, _ = rwi_to_awe(rwi, stats)
    b, _ = rwi_to_awe(np.exp(3.0 * rwi), stats)  # strictly increasing transform
    assert np.allclose(a, b)


def test_awe_literal_mode_also_matches_gdp_mean():
    rng = np.random.default_rng(2)
    stats = CountryStats("XX", gdp_pc=800.0, gini=0.33)
    awe, q = rwi_to_awe(rng.normal(size=25), stats, mode="literal")
    assert np.mean(awe) == pytest.approx(800.0, rel=1e-9)
    order = np.argsort(q)
    assert np.all(np.diff(awe[order]) >= 0.0)


def test_awe_missing_mode_rejected():
    with pytest.raises(InvalidInputError):
        rwi_to_awe([1.0], CountryStats("XX", 100.0, 0.3), mode="nope")


def test_distribution_single_bin_for_equal_values():
    rows = export_distribution([100.0, 100.0, 100.0], [1.0, 2.0, 3.0])
    assert len(rows) == 1
    assert rows[0][2] == pytest.approx(6.0)


def test_distribution_conserves_weight():
    rng = np.random.default_rng(3)
    awe = np.exp(rng.normal(6.0, 1.0, size=400))
    w = rng.uniform(0.5, 4.0, size=400)
    rows = export_distribution(awe, w)
    assert sum(r[2] for r in rows) == pytest.approx(float(np.sum(w)), rel=1e-12)


def test_distribution_linear_in_weights():
    rng = np.random.default_rng(4)
    awe = np.exp(rng.normal(6.0, 1.0, size=100))
    w = rng.uniform(0.5, 4.0, size=100)
    once = export_distribution(awe, w)
    twice = export_distribution(awe, 2.0 * w)
    for a, b in zip(once, twice):
        assert b[2] == pytest.approx(2.0 * a[2], rel=1e-12)
