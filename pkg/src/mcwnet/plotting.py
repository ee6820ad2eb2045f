"""Report figures, rendered off-screen to image files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .analysis import IMPORTANCE_GROUPS, DistributionReport, ImportanceProfile  # noqa: E402

GRID_COLORS = {"wide": "#1b9e77", "square": "#d95f02", "tall": "#7570b3"}

STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
}


def plot_distribution(report: DistributionReport, path: str | Path) -> Path:
    """Histogram of per-image std for each grid class, with the class means marked."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        means = report.means
        for g, (counts, edges) in report.histograms().items():
            ax.stairs(counts, edges, label=f"{g} (mean {means[g]:.1f})", color=GRID_COLORS[g],
                      fill=True, alpha=0.35)
            ax.axvline(means[g], color=GRID_COLORS[g], ls="--", lw=1)
        ax.set_xlabel("std of rain pixels per patch")
        ax.set_ylabel("images")
        ax.legend()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def plot_importance(profiles: Sequence[ImportanceProfile], path: str | Path) -> Path:
    """Grouped bars of feature importance before and after the SE gate, one panel per level."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(profiles), figsize=(2.4 * len(profiles), 2.6), sharey=True)
        axes = np.atleast_1d(axes)
        x = np.arange(len(IMPORTANCE_GROUPS))
        for ax, p in zip(axes, profiles):
            ax.bar(x - 0.2, p.lambdas_before, 0.4, label="before SE", color="#999999")
            ax.bar(x + 0.2, p.lambdas_after, 0.4, label="after SE", color="#d95f02")
            ax.set_xticks(x, IMPORTANCE_GROUPS)
            ax.set_title(f"level {p.level}")
        axes[0].set_ylabel("normalised L2 norm")
        axes[-1].legend()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def plot_loss(iterations: Sequence[int], totals: Sequence[float], path: str | Path,
              window: int = 50) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(iterations, totals, lw=0.6, color="#bbbbbb", label="loss")
        if len(totals) >= window:
            sm = np.convolve(totals, np.ones(window) / window, mode="valid")
            ax.plot(iterations[window - 1:], sm, color="#1b9e77", label=f"mean of {window}")
        ax.set_xlabel("iteration")
        ax.set_ylabel("L1 + L2")
        ax.legend()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)
