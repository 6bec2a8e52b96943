"""Exact-arithmetic brute-force oracles for tree induction.

Everything here runs in Fractions over small-integer instances, fully
independent of the library's float path, so comparisons can be exact.
"""

from fractions import Fraction

import numpy as np


def exact_sse(r, w, idx):
    if not idx:
        return Fraction(0)
    W = sum(w[i] for i in idx)
    S = sum(w[i] * r[i] for i in idx)
    mean = S / W
    return sum(w[i] * (r[i] - mean) ** 2 for i in idx)


def oracle_single_split_loss(X, r, w, idx, mcw):
    """Minimum SSE over all admissible single splits (or no split at all)."""
    best = exact_sse(r, w, idx)
    d = len(X[0])
    for feat in range(d):
        vals = sorted({X[i][feat] for i in idx})
        for a, b in zip(vals, vals[1:]):
            thr = Fraction(a + b, 2)
            left = [i for i in idx if X[i][feat] < thr]
            right = [i for i in idx if X[i][feat] >= thr]
            if sum(w[i] for i in left) < mcw or sum(w[i] for i in right) < mcw:
                continue
            loss = exact_sse(r, w, left) + exact_sse(r, w, right)
            if loss < best:
                best = loss
    return best


def oracle_depth2_loss(X, r, w, idx, mcw):
    """Exhaustive enumeration over all depth-<=2 trees."""
    best = oracle_single_split_loss(X, r, w, idx, mcw)
    d = len(X[0])
    for feat in range(d):
        vals = sorted({X[i][feat] for i in idx})
        for a, b in zip(vals, vals[1:]):
            thr = Fraction(a + b, 2)
            left = [i for i in idx if X[i][feat] < thr]
            right = [i for i in idx if X[i][feat] >= thr]
            if sum(w[i] for i in left) < mcw or sum(w[i] for i in right) < mcw:
                continue
            loss = oracle_single_split_loss(X, r, w, left, mcw) + oracle_single_split_loss(
                X, r, w, right, mcw
            )
            if loss < best:
                best = loss
    return best


def exact_tree_loss(node, X, r, w, idx):
    """A fitted tree's training loss, recomputed from its partition exactly."""
    if node.is_leaf:
        return exact_sse(r, w, idx)
    left = [i for i in idx if X[i][node.feature] < node.threshold]
    right = [i for i in idx if X[i][node.feature] >= node.threshold]
    return exact_tree_loss(node.left, X, r, w, left) + exact_tree_loss(
        node.right, X, r, w, right
    )


def random_instance(rng):
    """Small-integer instance: exact in both float and Fraction arithmetic."""
    n = int(rng.integers(2, 13))
    d = int(rng.integers(1, 4))
    X = [[int(v) for v in row] for row in rng.integers(-4, 5, size=(n, d))]
    r = [Fraction(int(v)) for v in rng.integers(-4, 5, size=n)]
    w = [Fraction(int(v)) for v in rng.integers(1, 4, size=n)]
    return X, r, w
