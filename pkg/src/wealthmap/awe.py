"""Absolute wealth estimates from relative ranks.

Each country's wealth distribution is parameterized by GDP per capita
and the Gini coefficient: Pareto shape alpha = (1 + gini) / (2 gini),
log-normal sigma = sqrt(2) * probit((gini + 1) / 2) and
mu = ln(gdp_pc) - sigma^2 / 2. The inverse CDF uses the log-normal
branch below the switch quantile 1 - 1/alpha and a Pareto upper tail
above it, glued continuously at the switch. Tile ranks map through the
ICDF and are rescaled so the unweighted tile mean equals GDP per capita
exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from wealthmap.exceptions import InvalidInputError
from wealthmap.util import average_ranks

# Rational approximation coefficients for the inverse normal CDF
# (central and tail branches), refined below by one Halley step against
# the erfc-based CDF so the result is accurate to ~1e-15.
_A = (
    -3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
    1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00,
)
_B = (
    -5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
    6.680131188771972e01, -1.328068155288572e01,
)
_C = (
    -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
    -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00,
)
_D = (
    7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
    3.754408661907416e00,
)
_P_LOW = 0.02425


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def probit(q: float) -> float:
    """Inverse standard normal CDF on (0, 1)."""
    if not 0.0 < q < 1.0:
        raise InvalidInputError(f"probit requires q in (0, 1), got {q}")
    if q < _P_LOW:
        u = math.sqrt(-2.0 * math.log(q))
        x = (((((_C[0] * u + _C[1]) * u + _C[2]) * u + _C[3]) * u + _C[4]) * u + _C[5]) / (
            (((_D[0] * u + _D[1]) * u + _D[2]) * u + _D[3]) * u + 1.0
        )
    elif q <= 1.0 - _P_LOW:
        u = q - 0.5
        r = u * u
        x = (
            (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5])
            * u
            / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
        )
    else:
        u = math.sqrt(-2.0 * math.log(1.0 - q))
        x = -(((((_C[0] * u + _C[1]) * u + _C[2]) * u + _C[3]) * u + _C[4]) * u + _C[5]) / (
            (((_D[0] * u + _D[1]) * u + _D[2]) * u + _D[3]) * u + 1.0
        )
    # One Halley refinement step against the high-accuracy CDF.
    e = normal_cdf(x) - q
    u = e * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


@dataclass(frozen=True)
class CountryStats:
    iso2: str
    gdp_pc: float
    gini: float
    gdp_year: str = ""
    gini_year: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.gdp_pc) and self.gdp_pc > 0.0):
            raise InvalidInputError(f"{self.iso2}: gdp_pc must be positive, got {self.gdp_pc}")
        if not (math.isfinite(self.gini) and 0.0 < self.gini < 1.0):
            raise InvalidInputError(f"{self.iso2}: gini must be in (0, 1), got {self.gini}")


@dataclass(frozen=True)
class IcdfSpec:
    alpha: float
    sigma: float
    mu: float
    switch_quantile: float
    pareto_scale: float  # chosen so the two branches meet at the switch


def icdf_params(stats: CountryStats) -> IcdfSpec:
    """Closed-form distribution parameters from GDP per capita and Gini."""
    alpha = (1.0 + stats.gini) / (2.0 * stats.gini)
    sigma = math.sqrt(2.0) * probit((stats.gini + 1.0) / 2.0)
    mu = math.log(stats.gdp_pc) - sigma * sigma / 2.0
    switch = 1.0 - 1.0 / alpha
    if switch > 0.0:
        lognormal_at_switch = math.exp(mu + sigma * probit(switch))
    else:
        # alpha -> 1 (gini -> 1): the Pareto branch covers everything.
        lognormal_at_switch = math.exp(mu)
    pareto_scale = lognormal_at_switch * (1.0 - switch) ** (1.0 / alpha)
    return IcdfSpec(
        alpha=alpha, sigma=sigma, mu=mu, switch_quantile=switch, pareto_scale=pareto_scale
    )


def icdf_eval(spec: IcdfSpec, q: float) -> float:
    """Wealth at quantile q: log-normal below the switch, Pareto tail above."""
    if not 0.0 < q < 1.0:
        raise InvalidInputError(f"icdf_eval requires q in (0, 1), got {q}")
    if q <= spec.switch_quantile:
        return math.exp(spec.mu + spec.sigma * probit(q))
    return spec.pareto_scale * (1.0 - q) ** (-1.0 / spec.alpha)


def rwi_to_awe(rwi, stats: CountryStats, mode: str = "icdf") -> tuple[np.ndarray, np.ndarray]:
    """Convert one country's tile estimates to absolute wealth.

    Ranks are mid-rank quantiles (r - 0.5) / n with ties sharing the
    average rank, so identical estimates get identical wealth and the
    single-tile case is well defined. ``mode="icdf"`` (default) passes
    the rank through the country ICDF before rescaling; ``"literal"``
    rescales the raw rank instead, mirroring the alternative reading of
    the conversion formula. Both rescale so the unweighted mean equals
    GDP per capita exactly. Returns (awe, rank_quantiles).
    """
    values = np.asarray(rwi, dtype=float)
    if len(values) < 1:
        raise InvalidInputError("rwi_to_awe needs at least one tile")
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("rwi_to_awe requires finite estimates")
    if mode not in ("icdf", "literal"):
        raise InvalidInputError(f"unknown mode {mode!r}")
    n = len(values)
    q = (average_ranks(values) - 0.5) / n
    spec = icdf_params(stats)
    raw = np.array([icdf_eval(spec, qi) for qi in q])
    numerator = raw if mode == "icdf" else q
    awe = numerator * (stats.gdp_pc / float(np.mean(numerator)))
    return awe, q


def export_distribution(awe, weights=None, n_bins: int = 60) -> list[tuple[float, float, float]]:
    """Weighted histogram of log wealth, as (bin_left, bin_right, weight) rows.

    Bin edges are reported back in wealth units; bin weights sum to the
    total weight.
    """
    values = np.asarray(awe, dtype=float)
    if len(values) < 2:
        raise InvalidInputError("export_distribution needs at least 2 values")
    if np.any(values <= 0.0):
        raise InvalidInputError("wealth values must be positive for log binning")
    w = np.ones(len(values)) if weights is None else np.asarray(weights, dtype=float)
    logs = np.log(values)
    lo, hi = float(logs.min()), float(logs.max())
    if lo == hi:
        return [(float(values[0]), float(values[0]), float(np.sum(w)))]
    counts, edges = np.histogram(logs, bins=n_bins, range=(lo, hi), weights=w)
    wealth_edges = np.exp(edges)
    return [
        (float(wealth_edges[i]), float(wealth_edges[i + 1]), float(counts[i]))
        for i in range(n_bins)
    ]
