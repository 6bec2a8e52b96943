"""Matplotlib renderings written next to the delimited reports.

Every subcommand that emits a CSV report also drops a PNG giving the
same content at a glance. Figures render through the Agg backend with
pinned metadata so re-runs are byte-identical.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_RC = {
    "figure.figsize": (7.0, 4.5),
    "figure.dpi": 110,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.25,
    "axes.spines.top": False,
    "axes.spines.right": False,
}

_PNG_METADATA = {"Software": "wealthmap"}


def save_figure(fig, path: str) -> None:
    fig.savefig(path, metadata=_PNG_METADATA, bbox_inches="tight")
    plt.close(fig)


def cv_report_figure(per_protocol: dict[str, list[float]], path: str) -> None:
    """Box plot of per-country held-out R^2 for each protocol."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        names = [p for p in per_protocol if per_protocol[p]]
        ax.boxplot([per_protocol[p] for p in names], tick_labels=names, whis=(5, 95))
        for i, name in enumerate(names):
            vals = per_protocol[name]
            ax.plot(np.full(len(vals), i + 1), vals, "o", ms=3, alpha=0.6, color="tab:blue")
        ax.set_ylabel("per-country held-out $R^2$")
        ax.set_title("Cross-validation performance by protocol")
        save_figure(fig, path)


def importance_figure(univariate: dict[str, list[float]], gain: dict[str, float], path: str, top_n: int = 15) -> None:
    """Top features: univariate R^2 distribution and model gain, side by side."""
    ranked = sorted(gain, key=lambda f: -gain[f])[:top_n]
    with plt.rc_context(_RC):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 0.3 * top_n + 1.8), sharey=True)
        ypos = np.arange(len(ranked))[::-1]
        means = [float(np.mean(univariate.get(f, [0.0]))) for f in ranked]
        ax1.barh(ypos, means, color="tab:blue")
        ax1.set_yticks(ypos, ranked)
        ax1.set_xlabel("mean univariate $R^2$")
        ax2.barh(ypos, [gain[f] for f in ranked], color="tab:orange")
        ax2.set_xlabel("mean split gain")
        fig.suptitle("Feature importance")
        save_figure(fig, path)


def map_figure(lats, lons, values, path: str, label: str = "relative wealth", masked=None) -> None:
    """Tile-center scatter colored by value; masked tiles drawn hollow."""
    lats = np.asarray(lats, dtype=float)
    lons = np.asarray(lons, dtype=float)
    values = np.asarray(values, dtype=float)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        sc = ax.scatter(lons, lats, c=values, s=6, cmap="viridis", marker="s")
        if masked is not None and np.any(masked):
            ax.scatter(
                lons[masked], lats[masked], facecolors="none", edgecolors="red",
                s=14, linewidths=0.5, label="masked",
            )
            ax.legend(loc="upper right")
        ax.set_xlabel("longitude")
        ax.set_ylabel("latitude")
        ax.set_aspect("equal")
        fig.colorbar(sc, ax=ax, label=label)
        save_figure(fig, path)


def distribution_figure(bins: list[tuple[float, float, float]], path: str) -> None:
    """Step plot of the weighted log-wealth histogram."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        lefts = [b[0] for b in bins]
        weights = [b[2] for b in bins]
        widths = [b[1] - b[0] for b in bins]
        ax.bar(lefts, weights, width=widths, align="edge", color="tab:blue", alpha=0.8)
        ax.set_xscale("log")
        ax.set_xlabel("absolute wealth (USD per capita, log scale)")
        ax.set_ylabel("population weight")
        ax.set_title("Estimated wealth distribution")
        save_figure(fig, path)


def targeting_figure(header: list[str], rows: list[list], path: str) -> None:
    """Grouped bars of accuracy and precision/recall per scheme and budget."""
    metric_cols = [i for i, h in enumerate(header) if h.startswith(("accuracy_", "precision_recall_"))]
    labels = [f"{r[0]}@{r[1]}" if r[1] else str(r[0]) for r in rows]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(8.5, 4.5))
        x = np.arange(len(rows))
        width = 0.8 / max(len(metric_cols), 1)
        for k, col in enumerate(metric_cols):
            vals = [float(r[col]) for r in rows]
            ax.bar(x + k * width, vals, width, label=header[col])
        ax.set_xticks(x + 0.4 - width / 2, labels, rotation=30, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("share")
        ax.set_title("Targeting performance by scheme")
        ax.legend(fontsize=7)
        save_figure(fig, path)
