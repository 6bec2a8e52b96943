"""Small shared helpers: reproducible RNG streams, ranking, weighted stats."""

from __future__ import annotations

import zlib

import numpy as np


def child_rng(seed: int, *labels) -> np.random.Generator:
    """A generator seeded by ``seed`` plus a stable hash of context labels.

    Using labeled substreams keeps results independent of iteration
    order (e.g. per-country folds) and of Python's randomized str hash.
    """
    keys = [int(seed) & 0xFFFFFFFF]
    for label in labels:
        if isinstance(label, (int, np.integer)):
            keys.append(int(label) & 0xFFFFFFFF)
        else:
            keys.append(zlib.crc32(str(label).encode("utf-8")))
    return np.random.default_rng(keys)


def average_ranks(values) -> np.ndarray:
    """1-based ranks with ties sharing the average rank of their block."""
    v = np.asarray(values, dtype=float)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v), dtype=float)
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def weighted_mean(values, weights=None) -> float:
    v = np.asarray(values, dtype=float)
    if weights is None:
        return float(np.mean(v))
    w = np.asarray(weights, dtype=float)
    return float(np.sum(w * v) / np.sum(w))
