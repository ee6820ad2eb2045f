"""Rain-distribution statistics over patch grids and SE feature-importance profiles."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .blocks import GridSpec
from .data import RainPair
from .imageio import to_batch
from .network import DECODER_LEVELS, Model
from .tensor import no_grad

DEFAULT_TAU = 0.1
CANONICAL_GRIDS = {"wide": GridSpec(16, 4), "square": GridSpec(8, 8), "tall": GridSpec(4, 16)}
IMPORTANCE_GROUPS = ("1", "2", "3", "normal")


def worker_count(n_items: int) -> int:
    """Thread fan-out, capped by the ``MCWNET_THREADS`` environment variable."""
    cap = os.environ.get("MCWNET_THREADS")
    limit = int(cap) if cap and cap.isdigit() and int(cap) > 0 else (os.cpu_count() or 1)
    return max(1, min(limit, n_items))


# -- rain masks -------------------------------------------------------------


@dataclass
class RainMask:
    mask: np.ndarray  # H x W bool
    tau: float
    source: str = ""

    @property
    def count(self) -> int:
        return int(self.mask.sum())


def rain_mask(rainy, clean, tau: float = DEFAULT_TAU, source: str = "") -> RainMask:
    """Pixels where the largest per-channel absolute difference exceeds ``tau``."""
    rainy = np.asarray(rainy, dtype=np.float64)
    clean = np.asarray(clean, dtype=np.float64)
    if rainy.shape != clean.shape:
        raise ValueError(f"rainy {rainy.shape} vs clean {clean.shape}")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    diff = np.abs(rainy - clean)
    if diff.ndim == 3:
        diff = diff.max(axis=-1)
    return RainMask(diff > tau, tau, source)


@dataclass
class GridStats:
    grid: GridSpec
    per_patch_counts: np.ndarray  # a x b ints
    std: float


def grid_rain_std(mask: RainMask | np.ndarray, grid: GridSpec) -> GridStats:
    """Population std of rain-pixel counts over the ``grid`` patches.

    Masks whose size is not divisible by the grid are cropped from the
    bottom/right to the largest divisible size first.
    """
    m = mask.mask if isinstance(mask, RainMask) else np.asarray(mask, dtype=bool)
    H, W = m.shape
    ph, pw = H // grid.a, W // grid.b
    if ph == 0 or pw == 0:
        raise ValueError(f"{H}x{W} mask is smaller than a {grid} grid")
    m = m[: ph * grid.a, : pw * grid.b]
    counts = m.reshape(grid.a, ph, grid.b, pw).sum(axis=(1, 3))
    return GridStats(grid, counts, float(np.std(counts)))


# -- distribution report ----------------------------------------------------


@dataclass
class DistributionReport:
    rows: list[tuple[str, str, float]]  # (image_id, grid_class, std)
    tau: float
    bins: int = 20

    def stds(self, grid_class: str) -> np.ndarray:
        return np.array([s for _, g, s in self.rows if g == grid_class])

    @property
    def means(self) -> dict[str, float]:
        return {g: float(self.stds(g).mean()) for g in CANONICAL_GRIDS}

    def histograms(self) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """Per grid class ``(counts, edges)`` on bins shared by all classes."""
        all_std = np.array([s for _, _, s in self.rows])
        hi = float(all_std.max()) if all_std.size and all_std.max() > 0 else 1.0
        edges = np.linspace(0.0, hi, self.bins + 1)
        return {g: (np.histogram(self.stds(g), bins=edges)[0], edges) for g in CANONICAL_GRIDS}

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["image_id", "grid_class", "std"])
            for row in self.rows:
                w.writerow([row[0], row[1], repr(row[2])])

    def write_histogram_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["grid_class", "bin_lo", "bin_hi", "count"])
            for g, (counts, edges) in self.histograms().items():
                for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                    w.writerow([g, repr(float(lo)), repr(float(hi)), int(c)])


def _image_rows(pair: RainPair, tau: float) -> list[tuple[str, str, float]]:
    m = rain_mask(pair.rainy, pair.clean, tau, pair.id)
    return [(pair.id, g, grid_rain_std(m, spec).std) for g, spec in CANONICAL_GRIDS.items()]


def distribution_report(pairs: Sequence[RainPair], tau: float = DEFAULT_TAU,
                        bins: int = 20) -> DistributionReport:
    """Per-image std of patch rain counts for the wide, square and tall grids."""
    if not pairs:
        raise ValueError("distribution report needs at least one image pair")
    with ThreadPoolExecutor(max_workers=worker_count(len(pairs))) as ex:
        chunks = list(ex.map(lambda p: _image_rows(p, tau), pairs))  # keeps input order
    return DistributionReport([r for c in chunks for r in c], tau, bins)


# -- SE importance ----------------------------------------------------------


@dataclass
class ImportanceProfile:
    level: int
    lambdas_before: np.ndarray = field(default_factory=lambda: np.zeros(4))
    lambdas_after: np.ndarray = field(default_factory=lambda: np.zeros(4))


def _normalized_norms(x: np.ndarray, bounds: Sequence[int], keys: Sequence[str]) -> np.ndarray:
    norms = dict.fromkeys(IMPORTANCE_GROUPS, 0.0)
    for k, lo, hi in zip(keys, bounds[:-1], bounds[1:]):
        group = "normal" if k == "dec" else k[1:]
        norms[group] = float(np.linalg.norm(x[:, lo:hi]))
    v = np.array([norms[g] for g in IMPORTANCE_GROUPS])
    total = v.sum()
    return v / total if total > 0 else np.full(4, 0.25)


def se_importance(model: Model, image) -> list[ImportanceProfile]:
    """Normalised L2 magnitude of each MLC channel group before and after the SE gate.

    ``image`` is an H x W x 3 array or a (B, 3, H, W) batch. Groups are the
    three resampled encoder outputs and the previous decoder output
    (``normal``), which is absent, hence zero, at level 4.
    """
    if model.config.mlc_fusion != "se":
        raise ValueError(f"importance needs an SE-fused model, got fusion {model.config.mlc_fusion!r}")
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 3:
        x = to_batch(x)
    trace: dict = {}
    with no_grad():
        model(x, trace=trace)
    out = []
    for level in DECODER_LEVELS:
        t = trace[level]
        out.append(ImportanceProfile(
            level,
            _normalized_norms(t["concat"].data, t["bounds"], t["keys"]),
            _normalized_norms(t["se"].data, t["bounds"], t["keys"]),
        ))
    return out


def write_importance_csv(path: str | Path, profiles: Sequence[ImportanceProfile]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "group", "lambda_before", "lambda_after"])
        for p in profiles:
            for g, b, a in zip(IMPORTANCE_GROUPS, p.lambdas_before, p.lambdas_after):
                w.writerow([p.level, g, repr(float(b)), repr(float(a))])
