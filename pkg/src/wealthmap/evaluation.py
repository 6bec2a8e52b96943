"""Cross-validation protocols, hyperparameter search, and R-squared metrics.

Three protocols mirror the three ways held-out performance is measured:
random k-fold within a country, leave-one-country-out over the pooled
data, and spatially stratified folds built by ranking cells around a
random anchor so train and test regions do not interleave.

R-squared throughout is the squared (weighted) Pearson correlation --
the regression-line R^2 of a scatter plot -- which is invariant to
affine transforms of the predictions. The 1 - SSE/SST variant is
exposed separately for diagnostics.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from wealthmap.exceptions import InvalidInputError, UndefinedMetricError
from wealthmap.gbdt import (
    GRID_MAX_DEPTHS,
    GRID_MIN_CHILD_WEIGHTS,
    GbdtParams,
    predict,
    train,
)
from wealthmap.tilegrid import haversine_km_arrays
from wealthmap.util import child_rng

PROTOCOLS = ("basic_kfold", "leave_country_out", "spatial")
DEFAULT_K = 5


def _weighted_pearson(x, y, w):
    mx = np.sum(w * x) / np.sum(w)
    my = np.sum(w * y) / np.sum(w)
    cov = np.sum(w * (x - mx) * (y - my))
    vx = np.sum(w * (x - mx) ** 2)
    vy = np.sum(w * (y - my) ** 2)
    if vx <= 0.0 or vy <= 0.0:
        raise UndefinedMetricError("zero variance makes the correlation undefined")
    return cov / math.sqrt(vx * vy)


def r_squared(y_true, y_pred, weights=None) -> float:
    """Squared (weighted) Pearson correlation between truth and prediction."""
    yt = np.asarray(y_true, dtype=float)
    yp = np.asarray(y_pred, dtype=float)
    if yt.shape != yp.shape or yt.ndim != 1:
        raise InvalidInputError("r_squared expects two equal-length vectors")
    if len(yt) < 2:
        raise InvalidInputError("r_squared needs at least 2 observations")
    w = np.ones(len(yt)) if weights is None else np.asarray(weights, dtype=float)
    return float(_weighted_pearson(yt, yp, w) ** 2)


def r_squared_sse(y_true, y_pred, weights=None) -> float:
    """Diagnostic 1 - SSE/SST variant; penalizes miscalibrated predictions."""
    yt = np.asarray(y_true, dtype=float)
    yp = np.asarray(y_pred, dtype=float)
    w = np.ones(len(yt)) if weights is None else np.asarray(weights, dtype=float)
    my = np.sum(w * yt) / np.sum(w)
    sst = float(np.sum(w * (yt - my) ** 2))
    if sst <= 0.0:
        raise UndefinedMetricError("zero variance in y_true")
    sse = float(np.sum(w * (yt - yp) ** 2))
    return 1.0 - sse / sst


def _safe_r2(y_true, y_pred, weights=None):
    try:
        return r_squared(y_true, y_pred, weights)
    except (UndefinedMetricError, InvalidInputError):
        return None


@dataclass
class FoldResult:
    country: str
    fold: int
    n_test: int
    r2: float | None
    mse: float


@dataclass
class CvReport:
    protocol: str
    k: int
    seed: int
    params: GbdtParams
    folds: list[FoldResult] = field(default_factory=list)
    per_country: dict[str, float | None] = field(default_factory=dict)
    pooled_r2: float | None = None
    pooled_mse: float = float("nan")
    oos_pred: np.ndarray | None = None  # aligned to the input rows
    oos_count: np.ndarray | None = None

    def mean_country_r2(self) -> float:
        vals = [v for v in self.per_country.values() if v is not None]
        if not vals:
            raise UndefinedMetricError("no country has a defined R^2")
        return float(np.mean(vals))


def _country_groups(countries) -> dict[str, np.ndarray]:
    groups: dict[str, list[int]] = {}
    for i, c in enumerate(countries):
        groups.setdefault(c, []).append(i)
    return {c: np.asarray(v, dtype=int) for c, v in sorted(groups.items())}


def _run_tasks(tasks, threads: int):
    """Run (index, fn) tasks and return results ordered by index."""
    if threads <= 1 or len(tasks) <= 1:
        return [fn() for _, fn in sorted(tasks, key=lambda t: t[0])]
    results = {}
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = {pool.submit(fn): i for i, fn in tasks}
        for fut, i in futures.items():
            results[i] = fut.result()
    return [results[i] for i in sorted(results)]


def _finalize(report: CvReport, y, tested, preds):
    """Fill per-country means and pooled metrics from out-of-sample predictions."""
    y = np.asarray(y, dtype=float)
    per_country_folds: dict[str, list[float]] = {}
    for fr in report.folds:
        if fr.r2 is not None:
            per_country_folds.setdefault(fr.country, []).append(fr.r2)
        else:
            per_country_folds.setdefault(fr.country, [])
    report.per_country = {
        c: (float(np.mean(v)) if v else None) for c, v in sorted(per_country_folds.items())
    }
    counts = np.zeros(len(y), dtype=int)
    total = np.zeros(len(y))
    for idx, p in zip(tested, preds):
        counts[idx] += 1
        total[idx] += p
    mask = counts > 0
    oos = np.full(len(y), np.nan)
    oos[mask] = total[mask] / counts[mask]
    report.oos_pred = oos
    report.oos_count = counts
    flat_true = np.concatenate([y[idx] for idx in tested]) if tested else np.array([])
    flat_pred = np.concatenate(preds) if preds else np.array([])
    if len(flat_true) >= 2:
        report.pooled_r2 = _safe_r2(flat_true, flat_pred)
        report.pooled_mse = float(np.mean((flat_true - flat_pred) ** 2))
    return report


def basic_kfold_cv(
    X, y, countries, params: GbdtParams, k: int = DEFAULT_K, seed: int = 0,
    weights=None, threads: int = 1,
) -> CvReport:
    """Seeded random k-fold within each country; mean held-out R^2 per country."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    report = CvReport(protocol="basic_kfold", k=k, seed=seed, params=params)
    tasks = []
    order = 0
    for country, idx in _country_groups(countries).items():
        if len(idx) < k:
            raise InvalidInputError(f"country {country!r} has {len(idx)} rows, needs >= k={k}")
        rng = child_rng(seed, "basic_kfold", country)
        perm = idx[rng.permutation(len(idx))]
        folds = np.array_split(perm, k)
        for f, test_idx in enumerate(folds):
            train_idx = np.concatenate([folds[g] for g in range(k) if g != f])

            def task(country=country, f=f, train_idx=train_idx, test_idx=test_idx):
                model = train(X[train_idx], y[train_idx], w[train_idx], params)
                pred = predict(model, X[test_idx])
                return FoldResult(
                    country, f, len(test_idx), _safe_r2(y[test_idx], pred),
                    float(np.mean((y[test_idx] - pred) ** 2)),
                ), test_idx, pred

            tasks.append((order, task))
            order += 1
    results = _run_tasks(tasks, threads)
    report.folds = [r[0] for r in results]
    return _finalize(report, y, [r[1] for r in results], [r[2] for r in results])


def leave_country_out_cv(
    X, y, countries, params: GbdtParams, seed: int = 0, weights=None, threads: int = 1,
) -> CvReport:
    """One fold per country, trained on the pooled data of all the others."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    groups = _country_groups(countries)
    if len(groups) < 2:
        raise InvalidInputError("leave-country-out needs at least 2 countries")
    report = CvReport(protocol="leave_country_out", k=len(groups), seed=seed, params=params)
    all_idx = np.arange(len(y))
    tasks = []
    for order, (country, idx) in enumerate(groups.items()):
        train_idx = np.setdiff1d(all_idx, idx)

        def task(country=country, train_idx=train_idx, test_idx=idx):
            model = train(X[train_idx], y[train_idx], w[train_idx], params)
            pred = predict(model, X[test_idx])
            return FoldResult(
                country, 0, len(test_idx), _safe_r2(y[test_idx], pred),
                float(np.mean((y[test_idx] - pred) ** 2)),
            ), test_idx, pred

        tasks.append((order, task))
    results = _run_tasks(tasks, threads)
    report.folds = [r[0] for r in results]
    return _finalize(report, y, [r[1] for r in results], [r[2] for r in results])


def spatial_folds(lats, lons, k: int, rng) -> list[tuple[np.ndarray, np.ndarray]]:
    """k (train, test) index pairs: nearest ceil(n(k-1)/k) rows to a random
    anchor train, the far remainder tests. Anchors are drawn without
    replacement; distance ties break on row id so folds are reproducible."""
    n = len(lats)
    anchors = rng.choice(n, size=k, replace=False)
    n_train = (n * (k - 1) + k - 1) // k  # ceil
    out = []
    for anchor in anchors:
        d = haversine_km_arrays(lats[anchor], lons[anchor], lats, lons)
        order = np.lexsort((np.arange(n), d))
        out.append((order[:n_train], order[n_train:]))
    return out


def spatial_cv(
    X, y, countries, lats, lons, params: GbdtParams, k: int = DEFAULT_K, seed: int = 0,
    weights=None, threads: int = 1,
) -> CvReport:
    """Spatially stratified folds per country; repeated k times with fresh anchors."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    lats = np.asarray(lats, dtype=float)
    lons = np.asarray(lons, dtype=float)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    report = CvReport(protocol="spatial", k=k, seed=seed, params=params)
    tasks = []
    order = 0
    for country, idx in _country_groups(countries).items():
        if len(idx) < k:
            raise InvalidInputError(f"country {country!r} has {len(idx)} rows, needs >= k={k}")
        rng = child_rng(seed, "spatial", country)
        for f, (tr, te) in enumerate(spatial_folds(lats[idx], lons[idx], k, rng)):
            train_idx, test_idx = idx[tr], idx[te]

            def task(country=country, f=f, train_idx=train_idx, test_idx=test_idx):
                model = train(X[train_idx], y[train_idx], w[train_idx], params)
                pred = predict(model, X[test_idx])
                return FoldResult(
                    country, f, len(test_idx), _safe_r2(y[test_idx], pred),
                    float(np.mean((y[test_idx] - pred) ** 2)),
                ), test_idx, pred

            tasks.append((order, task))
            order += 1
    results = _run_tasks(tasks, threads)
    report.folds = [r[0] for r in results]
    return _finalize(report, y, [r[1] for r in results], [r[2] for r in results])


def run_protocol(
    protocol: str, X, y, countries, params: GbdtParams, k: int = DEFAULT_K, seed: int = 0,
    lats=None, lons=None, weights=None, threads: int = 1,
) -> CvReport:
    if protocol == "basic_kfold":
        return basic_kfold_cv(X, y, countries, params, k=k, seed=seed, weights=weights, threads=threads)
    if protocol == "leave_country_out":
        return leave_country_out_cv(X, y, countries, params, seed=seed, weights=weights, threads=threads)
    if protocol == "spatial":
        if lats is None or lons is None:
            raise InvalidInputError("spatial CV requires centroids")
        return spatial_cv(
            X, y, countries, lats, lons, params, k=k, seed=seed, weights=weights, threads=threads
        )
    raise InvalidInputError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")


def default_grid() -> list[tuple[int, float]]:
    return [(d, m) for d in GRID_MAX_DEPTHS for m in GRID_MIN_CHILD_WEIGHTS]


@dataclass
class GridPoint:
    max_depth: int
    min_child_weight: float
    cv_mse: float
    mean_r2: float | None


def grid_search(
    X, y, countries, protocol: str = "basic_kfold", grid=None, base: GbdtParams | None = None,
    k: int = DEFAULT_K, seed: int = 0, lats=None, lons=None, weights=None, threads: int = 1,
) -> tuple[GbdtParams, CvReport, list[GridPoint]]:
    """Evaluate every grid point under the protocol; pick minimal CV MSE.

    Ties break toward smaller depth, then smaller min_child_weight,
    which the sorted iteration order provides.
    """
    base = base or GbdtParams()
    points = sorted(grid if grid is not None else default_grid())
    if not points:
        raise InvalidInputError("empty hyperparameter grid")
    best = None
    rows = []
    for depth, mcw in points:
        params = GbdtParams(
            max_depth=depth, min_child_weight=mcw, n_trees=base.n_trees,
            learning_rate=base.learning_rate, seed=base.seed,
        )
        report = run_protocol(
            protocol, X, y, countries, params, k=k, seed=seed,
            lats=lats, lons=lons, weights=weights, threads=threads,
        )
        mean_r2 = None
        try:
            mean_r2 = report.mean_country_r2()
        except UndefinedMetricError:
            pass
        rows.append(GridPoint(depth, mcw, report.pooled_mse, mean_r2))
        if best is None or report.pooled_mse < best[1].pooled_mse:
            best = (params, report)
    return best[0], best[1], rows


def univariate_importance(X, y, countries, feature_names) -> list[tuple[str, str, float]]:
    """Per (country, feature) R^2 of a simple regression of the label on the feature.

    Constant features score 0; a constant label within a country is an error.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    rows = []
    for country, idx in _country_groups(countries).items():
        yc = y[idx]
        if np.var(yc) <= 0.0:
            raise UndefinedMetricError(f"label variance is zero within {country!r}")
        for j, name in enumerate(feature_names):
            xj = X[idx, j]
            if np.var(xj) <= 0.0:
                rows.append((country, name, 0.0))
            else:
                rows.append((country, name, r_squared(yc, xj)))
    return rows


def cross_country_matrix(
    X, y, countries, params: GbdtParams | dict[str, GbdtParams], k: int = DEFAULT_K,
    seed: int = 0, threads: int = 1,
):
    """R^2 of each train-country model on each test country.

    Rows index the test country, columns the training country; the
    diagonal holds the within-country basic k-fold mean. ``params`` may
    be a single setting or a per-training-country dict.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    groups = _country_groups(countries)
    names = list(groups)
    if len(names) < 2:
        raise InvalidInputError("cross-country matrix needs at least 2 countries")
    r2 = np.full((len(names), len(names)), np.nan)
    mse = np.full((len(names), len(names)), np.nan)

    def params_for(country: str) -> GbdtParams:
        if isinstance(params, dict):
            return params[country]
        return params

    for j, cj in enumerate(names):
        idx_j = groups[cj]
        model = train(X[idx_j], y[idx_j], params=params_for(cj))
        for i, ci in enumerate(names):
            if i == j:
                continue
            pred = predict(model, X[groups[ci]])
            val = _safe_r2(y[groups[ci]], pred)
            r2[i, j] = np.nan if val is None else val
            mse[i, j] = float(np.mean((y[groups[ci]] - pred) ** 2))
        diag = basic_kfold_cv(
            X[idx_j], y[idx_j], [cj] * len(idx_j), params_for(cj), k=k, seed=seed,
            threads=threads,
        )
        val = diag.per_country.get(cj)
        r2[j, j] = np.nan if val is None else val
        mse[j, j] = diag.pooled_mse
    return names, r2, mse


@dataclass
class SubsetR2:
    per_group: dict[str, float | None]
    pooled: float
    skipped: list[str] = field(default_factory=list)


def subset_r_squared(y_true, y_pred, groups, weights=None) -> SubsetR2:
    """R^2 within each group plus pooled; degenerate groups surface as None."""
    yt = np.asarray(y_true, dtype=float)
    yp = np.asarray(y_pred, dtype=float)
    w = np.ones(len(yt)) if weights is None else np.asarray(weights, dtype=float)
    out: dict[str, float | None] = {}
    skipped: list[str] = []
    for group, idx in _country_groups(groups).items():
        if len(idx) < 2:
            skipped.append(group)
            continue
        out[group] = _safe_r2(yt[idx], yp[idx], w[idx])
    return SubsetR2(per_group=out, pooled=r_squared(yt, yp, w), skipped=skipped)
