"""Gradient-boosted regression trees with squared-error loss, built from scratch.

Trees use an exact greedy split search: every feature, every
distinct-value midpoint. No histograms, no row or column subsampling.
A candidate split's gain is

    gain = S_L^2/W_L + S_R^2/W_R - S^2/W

with S the weighted residual sum and W the weight sum of a node; the
best strictly positive gain wins, ties broken by (lowest feature index,
lowest threshold). Leaves predict S/W, the weighted mean residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from wealthmap.exceptions import InvalidInputError, SchemaError, WealthmapError

DEFAULT_LEARNING_RATE = 0.1
DEFAULT_N_TREES = 100
DEFAULT_MAX_DEPTH = 5
DEFAULT_MIN_CHILD_WEIGHT = 1.0

# The tuning grid: 7 depths x 5 child weights = 35 points.
GRID_MAX_DEPTHS = (1, 3, 5, 10, 15, 20, 30)
GRID_MIN_CHILD_WEIGHTS = (1.0, 3.0, 5.0, 7.0, 10.0)


@dataclass
class GbdtParams:
    max_depth: int = DEFAULT_MAX_DEPTH
    min_child_weight: float = DEFAULT_MIN_CHILD_WEIGHT
    n_trees: int = DEFAULT_N_TREES
    learning_rate: float = DEFAULT_LEARNING_RATE
    seed: int = 0

    def __post_init__(self):
        if self.max_depth < 1:
            raise InvalidInputError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.min_child_weight < 0:
            raise InvalidInputError("min_child_weight must be >= 0")
        if not 0.0 < self.learning_rate <= 1.0:
            raise InvalidInputError("learning_rate must be in (0, 1]")
        if self.n_trees < 1:
            raise InvalidInputError("n_trees must be >= 1")


@dataclass
class TreeNode:
    """Either an internal split (feature/threshold/gain) or a leaf (value/weight)."""

    feature: int | None = None
    threshold: float | None = None
    gain: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    value: float | None = None
    weight: float | None = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


@dataclass
class WealthModel:
    """A trained boosted ensemble plus everything needed to reuse it."""

    base_score: float
    trees: list[TreeNode]
    params: GbdtParams
    feature_names: list[str]
    norm_stats: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    n_rows: int = 0

    @property
    def n_features(self) -> int:
        return len(self.feature_names)


def fit_tree(X, residuals, weights, params: GbdtParams, presorted=None) -> TreeNode:
    """Fit one regression tree to (residuals, weights); depth capped at max_depth.

    ``presorted`` optionally carries argsort(X, axis=0) so boosting does
    not re-sort the (unchanging) feature matrix every round.
    """
    X = np.asarray(X, dtype=float)
    r = np.asarray(residuals, dtype=float)
    w = np.asarray(weights, dtype=float)
    if X.ndim != 2 or len(r) != X.shape[0] or len(w) != X.shape[0]:
        raise InvalidInputError("fit_tree: X, residuals, weights row counts disagree")
    if X.shape[0] < 1:
        raise InvalidInputError("fit_tree needs at least one row")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(r)) and np.all(np.isfinite(w))):
        raise InvalidInputError("fit_tree input contains non-finite values")
    if float(np.sum(w)) <= 0.0:
        raise InvalidInputError("fit_tree needs positive total weight")
    order = np.argsort(X, axis=0, kind="stable") if presorted is None else presorted
    return _build_tree(X, r, w, order, params)


def _build_tree(X, r, w, order, params: GbdtParams) -> TreeNode:
    """Level-synchronous exact greedy induction.

    All nodes of one depth are scanned together: rows are regrouped by
    node id with a stable sort (preserving per-feature value order), and
    a single pair of prefix-sum arrays yields every candidate split gain
    for every node and feature at once.
    """
    n, d = X.shape
    cols = np.arange(d)
    rw = r * w
    mcw = params.min_child_weight
    node_of = np.zeros(n, dtype=np.int64)  # -1 marks rows of finished leaves
    spec: dict[int, tuple] = {}
    next_id = 1
    for depth in range(params.max_depth + 1):
        if not (node_of >= 0).any():
            break
        nid_mat = node_of[order]
        perm = np.argsort(nid_mat, axis=0, kind="stable")
        grouped = np.take_along_axis(order, perm, axis=0)
        xs = X[grouped, cols]
        rw_g = rw[grouped]
        w_g = w[grouped]
        cum_rw = np.cumsum(rw_g, axis=0)
        cum_w = np.cumsum(w_g, axis=0)
        nid_sorted = np.sort(node_of, kind="stable")
        ids, starts, counts = np.unique(nid_sorted, return_index=True, return_counts=True)
        frozen: list[int] = []
        split_plan: list[tuple[int, int, float, int]] = []  # node, feat, thr, left_id
        for gi, node_id in enumerate(ids):
            node_id = int(node_id)
            if node_id < 0:
                continue
            start = int(starts[gi])
            count = int(counts[gi])
            end = start + count
            base_rw = cum_rw[start] - rw_g[start]
            base_w = cum_w[start] - w_g[start]
            S = float(cum_rw[end - 1, 0] - base_rw[0])
            W = float(cum_w[end - 1, 0] - base_w[0])
            if depth >= params.max_depth or count < 2:
                spec[node_id] = ("leaf", S / W, W)
                frozen.append(node_id)
                continue
            SL = cum_rw[start : end - 1] - base_rw
            WL = cum_w[start : end - 1] - base_w
            SR = S - SL
            WR = W - WL
            with np.errstate(divide="ignore", invalid="ignore"):
                gains = SL * SL / WL + SR * SR / WR - S * S / W
            valid = (
                (xs[start + 1 : end] > xs[start : end - 1])
                & (WL >= mcw)
                & (WR >= mcw)
                & (WL > 0.0)
                & (WR > 0.0)
            )
            gains = np.where(valid, gains, -np.inf)
            best = float(gains.max(initial=-np.inf))
            if not best > 0.0:
                spec[node_id] = ("leaf", S / W, W)
                frozen.append(node_id)
                continue
            positions, feats = np.nonzero(gains == best)
            # Lowest feature wins; within a feature lower position = lower threshold.
            pick = np.lexsort((positions, feats))[0]
            pos, feat = int(positions[pick]), int(feats[pick])
            lo = xs[start + pos, feat]
            hi = xs[start + pos + 1, feat]
            threshold = 0.5 * (lo + hi)
            if not threshold > lo:
                # Adjacent representable values: the midpoint rounded down;
                # the upper value still separates the two sides.
                threshold = hi
            spec[node_id] = ("split", feat, float(threshold), best, next_id, next_id + 1)
            split_plan.append((node_id, feat, float(threshold), next_id))
            next_id += 2
        for node_id in frozen:
            node_of[node_of == node_id] = -1
        for node_id, feat, threshold, left_id in split_plan:
            rows = np.nonzero(node_of == node_id)[0]
            go_left = X[rows, feat] < threshold
            node_of[rows[go_left]] = left_id
            node_of[rows[~go_left]] = left_id + 1
    return _materialize(spec, 0)


def _materialize(spec: dict[int, tuple], node_id: int) -> TreeNode:
    entry = spec[node_id]
    if entry[0] == "leaf":
        return TreeNode(value=entry[1], weight=entry[2])
    _, feat, threshold, gain, left_id, right_id = entry
    return TreeNode(
        feature=feat,
        threshold=threshold,
        gain=gain,
        left=_materialize(spec, left_id),
        right=_materialize(spec, right_id),
    )


def tree_predict(root: TreeNode, X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0], dtype=float)
    stack = [(root, np.arange(X.shape[0]))]
    while stack:
        node, idx = stack.pop()
        if len(idx) == 0:
            continue
        if node.is_leaf:
            out[idx] = node.value
        else:
            mask = X[idx, node.feature] < node.threshold
            stack.append((node.left, idx[mask]))
            stack.append((node.right, idx[~mask]))
    return out


def train(
    X,
    y,
    weights=None,
    params: GbdtParams | None = None,
    feature_names: list[str] | None = None,
    norm_stats=None,
) -> WealthModel:
    """Boost n_trees trees against the running residuals.

    Training weighted MSE is checked to be nonincreasing after every
    round; with exact leaf means and learning_rate in (0, 1] an increase
    indicates a bug, so it raises rather than warns.
    """
    params = params or GbdtParams()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise InvalidInputError("train: X and y row counts disagree")
    if X.shape[0] < 2:
        raise InvalidInputError("train needs at least 2 rows")
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
        raise InvalidInputError("train input contains non-finite values")
    if np.any(w < 0) or float(np.sum(w)) <= 0.0:
        raise InvalidInputError("train weights must be nonnegative with positive sum")
    if feature_names is None:
        feature_names = [f"f{j}" for j in range(X.shape[1])]
    if len(feature_names) != X.shape[1]:
        raise InvalidInputError("feature_names arity does not match X")

    W = float(np.sum(w))
    base = float(np.sum(w * y) / W)
    pred = np.full(len(y), base)
    mse = float(np.sum(w * (y - pred) ** 2) / W)
    trees: list[TreeNode] = []
    presorted = np.argsort(X, axis=0, kind="stable")
    for _ in range(params.n_trees):
        tree = fit_tree(X, y - pred, w, params, presorted=presorted)
        pred = pred + params.learning_rate * tree_predict(tree, X)
        new_mse = float(np.sum(w * (y - pred) ** 2) / W)
        if new_mse > mse * (1.0 + 1e-9) + 1e-12:
            raise WealthmapError(
                f"training MSE increased ({mse} -> {new_mse}); boosting invariant violated"
            )
        mse = new_mse
        trees.append(tree)
    return WealthModel(
        base_score=base,
        trees=trees,
        params=params,
        feature_names=list(feature_names),
        norm_stats=dict(norm_stats) if norm_stats else {},
        n_rows=len(y),
    )


def predict(model: WealthModel, rows) -> np.ndarray:
    """Ensemble prediction; pure per row, independent of row order."""
    X = np.asarray(rows, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != model.n_features:
        raise InvalidInputError(
            f"row arity {X.shape[1]} does not match model arity {model.n_features}"
        )
    out = np.full(X.shape[0], model.base_score)
    for tree in model.trees:
        out += model.params.learning_rate * tree_predict(tree, X)
    return out[0] if single else out


def gain_importance(model: WealthModel) -> tuple[np.ndarray, np.ndarray]:
    """Mean split gain and split count per feature (zero when never used)."""
    totals = np.zeros(model.n_features)
    counts = np.zeros(model.n_features, dtype=int)

    def visit(node: TreeNode):
        if node.is_leaf:
            return
        totals[node.feature] += node.gain
        counts[node.feature] += 1
        visit(node.left)
        visit(node.right)

    for tree in model.trees:
        visit(tree)
    with np.errstate(invalid="ignore"):
        means = np.where(counts > 0, totals / np.maximum(counts, 1), 0.0)
    return means, counts


def _serialize_node(node: TreeNode, lines: list[str]) -> None:
    if node.is_leaf:
        lines.append(f"l {node.value!r} {node.weight!r}")
    else:
        lines.append(f"s {node.feature} {node.threshold!r} {node.gain!r}")
        _serialize_node(node.left, lines)
        _serialize_node(node.right, lines)


def model_to_text(model: WealthModel) -> str:
    """Versioned text serialization: params, normalization stats, trees in preorder."""
    p = model.params
    lines = [
        "wealthmap-model v1",
        f"params max_depth={p.max_depth} min_child_weight={p.min_child_weight!r} "
        f"n_trees={p.n_trees} learning_rate={p.learning_rate!r} seed={p.seed}",
        f"n_rows {model.n_rows}",
        f"base_score {model.base_score!r}",
        "features " + ",".join(model.feature_names),
    ]
    for country in sorted(model.norm_stats):
        means, stds = model.norm_stats[country]
        lines.append(
            f"norm {country} "
            + ",".join(repr(float(v)) for v in means)
            + " "
            + ",".join(repr(float(v)) for v in stds)
        )
    for i, tree in enumerate(model.trees):
        lines.append(f"tree {i}")
        _serialize_node(tree, lines)
    lines.append("end")
    return "\n".join(lines) + "\n"


def _parse_nodes(lines: list[str], pos: int) -> tuple[TreeNode, int]:
    kind, _, rest = lines[pos].partition(" ")
    if kind == "l":
        value, weight = rest.split(" ")
        return TreeNode(value=float(value), weight=float(weight)), pos + 1
    if kind == "s":
        feat, threshold, gain = rest.split(" ")
        left, pos = _parse_nodes(lines, pos + 1)
        right, pos = _parse_nodes(lines, pos)
        return (
            TreeNode(
                feature=int(feat),
                threshold=float(threshold),
                gain=float(gain),
                left=left,
                right=right,
            ),
            pos,
        )
    raise SchemaError(f"unexpected node line {lines[pos]!r}")


def model_from_text(text: str) -> WealthModel:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    if not lines or lines[0] != "wealthmap-model v1":
        raise SchemaError("not a wealthmap model file")
    params = None
    n_rows = 0
    base_score = None
    feature_names: list[str] = []
    norm_stats: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    trees: list[TreeNode] = []
    pos = 1
    while pos < len(lines):
        line = lines[pos]
        key, _, rest = line.partition(" ")
        if key == "params":
            kv = dict(item.split("=") for item in rest.split(" "))
            params = GbdtParams(
                max_depth=int(kv["max_depth"]),
                min_child_weight=float(kv["min_child_weight"]),
                n_trees=int(kv["n_trees"]),
                learning_rate=float(kv["learning_rate"]),
                seed=int(kv["seed"]),
            )
            pos += 1
        elif key == "n_rows":
            n_rows = int(rest)
            pos += 1
        elif key == "base_score":
            base_score = float(rest)
            pos += 1
        elif key == "features":
            feature_names = rest.split(",")
            pos += 1
        elif key == "norm":
            country, means_raw, stds_raw = rest.split(" ")
            norm_stats[country] = (
                np.array([float(v) for v in means_raw.split(",")]),
                np.array([float(v) for v in stds_raw.split(",")]),
            )
            pos += 1
        elif key == "tree":
            root, pos = _parse_nodes(lines, pos + 1)
            trees.append(root)
        elif key == "end":
            pos += 1
        else:
            raise SchemaError(f"unexpected model line {line!r}")
    if params is None or base_score is None or not feature_names:
        raise SchemaError("model file missing params, base_score, or features")
    return WealthModel(
        base_score=base_score,
        trees=trees,
        params=params,
        feature_names=feature_names,
        norm_stats=norm_stats,
        n_rows=n_rows,
    )
