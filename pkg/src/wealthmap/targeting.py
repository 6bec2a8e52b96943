"""Budget-constrained geographic targeting simulations.

A program ranks spatial units by predicted wealth and enrolls whole
units, poorest first, until the next unit would overshoot the budget;
households inside that marginal unit are then randomly drawn
(probability proportional to survey weight) until the budget is hit.
The "true poor" are the weighted bottom share of households by surveyed
wealth. With a fixed budget each selection mistake displaces exactly one
deserving household, so precision and recall coincide and the report
carries a single precision/recall value per budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from wealthmap.evaluation import r_squared
from wealthmap.exceptions import InvalidInputError
from wealthmap.tilegrid import ANALYSIS_ZOOM, LatLon, haversine_km_arrays, latlon_to_tile, quadkey
from wealthmap.util import child_rng

DEFAULT_BUDGETS = (0.25, 0.5)

SCHEME_KINDS = ("ml_tiles", "ml_units", "survey_units_exclude", "survey_units_impute", "knn")


@dataclass
class TargetHousehold:
    household_id: str
    country: str
    location: LatLon
    true_wealth: float
    weight: float
    quadkey: str = ""

    def __post_init__(self):
        if self.weight <= 0.0:
            raise InvalidInputError(f"household {self.household_id}: weight must be positive")
        if not self.quadkey:
            self.quadkey = quadkey(latlon_to_tile(self.location, ANALYSIS_ZOOM))


@dataclass
class Assignment:
    """Per-household predicted wealth under one scheme, plus coverage counts."""

    scheme: str
    predictions: np.ndarray  # NaN where the scheme cannot evaluate the household
    units: list[str | None]  # spatial unit carrying each household's prediction
    n_units_total: int | None
    n_units_with_estimates: int | None

    @property
    def evaluated(self) -> np.ndarray:
        return np.isfinite(self.predictions)


def assign_ml_tiles(households: list[TargetHousehold], tile_rwi: dict[str, float]) -> Assignment:
    """Panel-A style: each household gets the estimate of its own tile."""
    preds = np.full(len(households), np.nan)
    units: list[str | None] = []
    for i, hh in enumerate(households):
        units.append(hh.quadkey)
        if hh.quadkey in tile_rwi:
            preds[i] = tile_rwi[hh.quadkey]
    return Assignment(
        scheme="ml_tiles",
        predictions=preds,
        units=units,
        n_units_total=len(tile_rwi),
        n_units_with_estimates=len(tile_rwi),
    )


def _household_units(households, unit_by_quadkey: dict[str, str]) -> list[str]:
    units = []
    for hh in households:
        unit = unit_by_quadkey.get(hh.quadkey)
        if unit is None:
            raise InvalidInputError(
                f"household {hh.household_id}: tile {hh.quadkey} is outside every unit "
                "in the hierarchy table"
            )
        units.append(unit)
    return units


def assign_ml_units(
    households: list[TargetHousehold],
    unit_values: dict[str, float],
    unit_by_quadkey: dict[str, str],
    n_units_total: int,
) -> Assignment:
    """Each household gets the ML estimate aggregated to its admin unit."""
    units = _household_units(households, unit_by_quadkey)
    preds = np.array([unit_values.get(u, np.nan) for u in units])
    return Assignment(
        scheme="ml_units",
        predictions=preds,
        units=list(units),
        n_units_total=n_units_total,
        n_units_with_estimates=len(unit_values),
    )


def assign_survey_units(
    households: list[TargetHousehold],
    unit_survey_wealth: dict[str, float],
    unit_by_quadkey: dict[str, str],
    n_units_total: int,
    impute: bool = False,
    unit_centroids: dict[str, tuple[float, float]] | None = None,
) -> Assignment:
    """Panel B/C style: unit means from the household survey.

    Without imputation, households in unsurveyed units are excluded from
    the evaluation entirely. With it, an unsurveyed unit inherits the
    value of the nearest surveyed unit by centroid distance.
    """
    units = _household_units(households, unit_by_quadkey)
    values = dict(unit_survey_wealth)
    if impute:
        if not unit_centroids:
            raise InvalidInputError("imputation requires unit centroids")
        surveyed = sorted(values)
        missing = sorted({u for u in units if u not in values})
        if missing and not surveyed:
            raise InvalidInputError("no surveyed unit to impute from")
        if missing:
            s_lat = np.array([unit_centroids[u][0] for u in surveyed])
            s_lon = np.array([unit_centroids[u][1] for u in surveyed])
            for u in missing:
                if u not in unit_centroids:
                    raise InvalidInputError(f"unit {u!r} has no centroid for imputation")
                d = haversine_km_arrays(unit_centroids[u][0], unit_centroids[u][1], s_lat, s_lon)
                values[u] = values[surveyed[int(np.argmin(d))]]
    preds = np.array([values.get(u, np.nan) for u in units])
    return Assignment(
        scheme="survey_units_impute" if impute else "survey_units_exclude",
        predictions=preds,
        units=list(units),
        n_units_total=n_units_total,
        n_units_with_estimates=len(values),
    )


def assign_knn_clusters(
    households: list[TargetHousehold],
    cluster_lats,
    cluster_lons,
    cluster_wealth,
    k: int,
) -> Assignment:
    """Panel-D style: mean wealth of the k nearest survey clusters."""
    lats = np.asarray(cluster_lats, dtype=float)
    lons = np.asarray(cluster_lons, dtype=float)
    wealth = np.asarray(cluster_wealth, dtype=float)
    if k < 1 or k > len(wealth):
        raise InvalidInputError(f"k={k} outside [1, {len(wealth)}]")
    preds = np.empty(len(households))
    for i, hh in enumerate(households):
        d = haversine_km_arrays(hh.location.lat, hh.location.lon, lats, lons)
        order = np.lexsort((np.arange(len(d)), d))
        preds[i] = float(np.mean(wealth[order[:k]]))
    return Assignment(
        scheme=f"knn:{k}",
        predictions=preds,
        units=[None] * len(households),
        n_units_total=None,
        n_units_with_estimates=None,
    )


@dataclass
class BudgetResult:
    budget: float
    accuracy: float
    precision: float
    recall: float
    selected: np.ndarray
    poor: np.ndarray
    selected_weight: float
    poor_weight: float


def simulate_budget_targeting(
    true_wealth,
    predicted,
    weights,
    units,
    budget: float,
    seed: int = 0,
    household_ids=None,
) -> BudgetResult:
    """Select the weighted-bottom-``budget`` share by predicted unit wealth.

    Both the true-poor set and the selection use the same prefix rule on
    the cumulative-weight axis (a household enters while the running
    weight is still below budget * total), so the two masses agree to
    within one household's weight, exactly so under equal weights.
    """
    if not 0.0 < budget < 1.0:
        raise InvalidInputError(f"budget must be in (0, 1), got {budget}")
    true_wealth = np.asarray(true_wealth, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    w = np.asarray(weights, dtype=float)
    n = len(true_wealth)
    if not (len(predicted) == len(w) == n):
        raise InvalidInputError("simulate_budget_targeting: input lengths disagree")
    if not (np.all(np.isfinite(true_wealth)) and np.all(np.isfinite(predicted))):
        raise InvalidInputError("simulation requires finite true and predicted wealth")
    ids = (
        np.array([str(i) for i in range(n)])
        if household_ids is None
        else np.asarray(household_ids, dtype=str)
    )
    total = float(np.sum(w))
    target = budget * total

    # True poor: ascending (true wealth, id); enter while below the target.
    poor = np.zeros(n, dtype=bool)
    order = np.lexsort((ids, true_wealth))
    cum = 0.0
    for i in order:
        if cum >= target:
            break
        poor[i] = True
        cum += w[i]
    poor_weight = float(np.sum(w[poor]))

    # Selection: whole units in ascending predicted wealth, the marginal
    # unit filled by seeded weight-proportional draws.
    unit_ids = [u if u is not None else f"__hh_{hid}" for u, hid in zip(units, ids)]
    unit_pred: dict[str, float] = {}
    unit_members: dict[str, list[int]] = {}
    for i, u in enumerate(unit_ids):
        unit_members.setdefault(u, []).append(i)
        unit_pred[u] = float(predicted[i])
    order_units = sorted(unit_pred, key=lambda u: (unit_pred[u], u))
    selected = np.zeros(n, dtype=bool)
    rng = child_rng(seed, "marginal-unit")
    cum = 0.0
    for u in order_units:
        if cum >= target:
            break
        members = sorted(unit_members[u], key=lambda i: ids[i])
        unit_weight = float(np.sum(w[members]))
        if cum + unit_weight <= target:
            selected[members] = True
            cum += unit_weight
            continue
        # Marginal unit: weight-proportional draws without replacement.
        remaining = list(members)
        while remaining and cum < target:
            probs = w[remaining] / np.sum(w[remaining])
            pick = int(rng.choice(len(remaining), p=probs))
            i = remaining.pop(pick)
            selected[i] = True
            cum += w[i]
        break
    selected_weight = float(np.sum(w[selected]))

    both = float(np.sum(w[selected & poor]))
    accuracy = float(np.sum(w[selected == poor]) / total)
    precision = both / selected_weight if selected_weight > 0 else 0.0
    recall = both / poor_weight if poor_weight > 0 else 0.0
    return BudgetResult(
        budget=budget,
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        selected=selected,
        poor=poor,
        selected_weight=selected_weight,
        poor_weight=poor_weight,
    )


def household_r2(true_wealth, predicted, weights) -> float:
    """Survey-weighted squared correlation at the household level."""
    return r_squared(true_wealth, predicted, weights)


@dataclass
class TargetingReport:
    scheme: str
    country: str
    n_units_total: int | None
    n_units_with_estimates: int | None
    n_units_with_truth: int | None
    n_units_with_both: int | None
    n_households: int
    r2: float
    budgets: dict[float, BudgetResult] = field(default_factory=dict)


def run_scheme(
    households: list[TargetHousehold],
    assignment: Assignment,
    budgets=DEFAULT_BUDGETS,
    seed: int = 0,
    country: str = "",
) -> TargetingReport:
    """Evaluate one scheme at each budget over its evaluable households."""
    mask = assignment.evaluated
    if int(np.sum(mask)) < 2:
        raise InvalidInputError(f"{assignment.scheme}: fewer than 2 evaluable households")
    truth = np.array([hh.true_wealth for hh in households])
    weights = np.array([hh.weight for hh in households])
    ids = np.array([hh.household_id for hh in households])
    idx = np.nonzero(mask)[0]
    units = [assignment.units[i] for i in idx]
    if assignment.units[0] is not None:
        unit_set = {u for u in assignment.units if u is not None}
        both_set = {assignment.units[i] for i in idx}
        n_truth, n_both = len(unit_set), len(both_set)
    else:
        n_truth = n_both = None
    report = TargetingReport(
        scheme=assignment.scheme,
        country=country,
        n_units_total=assignment.n_units_total,
        n_units_with_estimates=assignment.n_units_with_estimates,
        n_units_with_truth=n_truth,
        n_units_with_both=n_both,
        n_households=len(idx),
        r2=household_r2(truth[idx], assignment.predictions[idx], weights[idx]),
    )
    for budget in budgets:
        report.budgets[budget] = simulate_budget_targeting(
            truth[idx], assignment.predictions[idx], weights[idx], units,
            budget, seed=seed, household_ids=ids[idx],
        )
    return report


def emit_table(reports: list[TargetingReport], budgets=DEFAULT_BUDGETS):
    """Rows mirroring the 11-column targeting-report layout."""
    budgets = sorted(budgets)
    header = (
        ["scheme", "country", "n_units", "n_units_with_estimates", "pct_units_with_estimates",
         "n_units_with_truth", "n_units_with_both", "n_households", "r2"]
        + [f"accuracy_{int(100 * b)}" for b in budgets]
        + [f"precision_recall_{int(100 * b)}" for b in budgets]
    )
    rows = []
    for rep in reports:
        if rep.n_units_total:
            pct = 100.0 * rep.n_units_with_estimates / rep.n_units_total
        else:
            pct = None
        row = [
            rep.scheme, rep.country, rep.n_units_total, rep.n_units_with_estimates, pct,
            rep.n_units_with_truth, rep.n_units_with_both, rep.n_households, rep.r2,
        ]
        row += [rep.budgets[b].accuracy for b in budgets]
        row += [rep.budgets[b].precision for b in budgets]
        rows.append(row)
    return header, rows
