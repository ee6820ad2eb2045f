"""Deterministic mini-batch training loop."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import CROP_MULTIPLE, RainPair, random_crop
from .imageio import to_batch
from .network import Model, loss_terms
from .optim import AdamState, adam_step
from .serialize import save_weights

log = logging.getLogger(__name__)

DEFAULT_LR = {"large": 1e-4, "small": 5e-4, "toy": 1e-3}


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    crop: int = 64
    batch: int = 4
    lr: float = 5e-4
    epochs: int = 1
    seed: int = 0
    iterations: int | None = None  # overrides epochs when set
    checkpoint_every: int = 0
    out_dir: str | Path | None = None

    def __post_init__(self):
        if self.crop <= 0 or self.crop % CROP_MULTIPLE:
            raise ValueError(f"crop must be a positive multiple of {CROP_MULTIPLE}, got {self.crop}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if self.epochs < 0 or (self.iterations is not None and self.iterations < 0):
            raise ValueError("epochs and iterations must be non-negative")

    def total_iterations(self, n_pairs: int) -> int:
        if self.iterations is not None:
            return self.iterations
        return self.epochs * math.ceil(n_pairs / self.batch)


@dataclass
class LossRecord:
    iteration: int
    l1: float
    l2: float

    @property
    def total(self) -> float:
        return self.l1 + self.l2


@dataclass
class TrainResult:
    model: Model
    log: list[LossRecord] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    seconds: float = 0.0


def _index_stream(n: int, rng: np.random.Generator):
    while True:
        yield from rng.permutation(n)


def make_batch(pairs: Sequence[RainPair], crop: int, rng: np.random.Generator):
    crops = [random_crop(p, crop, rng) for p in pairs]
    return (to_batch(np.stack([c.rainy for c in crops])),
            to_batch(np.stack([c.clean for c in crops])))


def train(model: Model, dataset: Sequence[RainPair], config: TrainConfig,
          callback: Callable[[int, LossRecord, Model], bool | None] | None = None) -> TrainResult:
    """Train ``model`` in place with Adam on the L1 + L2 objective.

    Batches cycle through shuffled epochs of ``dataset``. ``callback`` runs
    after every step; returning ``True`` stops training early.
    """
    if not dataset:
        raise TrainingError("training set is empty")
    rng = np.random.default_rng(config.seed)
    order = _index_stream(len(dataset), rng)
    state = AdamState(lr=config.lr)
    out_dir = Path(config.out_dir) if config.out_dir is not None else None
    result = TrainResult(model)
    start = time.perf_counter()
    n_iter = config.total_iterations(len(dataset))
    for it in range(n_iter):
        picks = [dataset[int(next(order))] for _ in range(config.batch)]
        rainy, clean = make_batch(picks, config.crop, rng)
        model.zero_grad()
        pred = model(rainy)
        l1, l2 = loss_terms(pred, clean)
        loss = l1 + l2
        if not math.isfinite(loss.item()):
            raise TrainingError(f"non-finite loss at iteration {it} (l1={l1.item()}, l2={l2.item()}); "
                                f"try a lower learning rate than {config.lr}")
        loss.backward()
        adam_step(model.params, {k: p.grad for k, p in model.params.items()}, state)
        rec = LossRecord(it, l1.item(), l2.item())
        result.log.append(rec)
        if out_dir is not None and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            result.checkpoints.append(save_weights(model, out_dir / f"ckpt_{it + 1:06d}.mcww"))
        if it % 50 == 0:
            log.info("iter %d loss %.5f", it, rec.total)
        if callback is not None and callback(it, rec, model):
            break
    result.seconds = time.perf_counter() - start
    return result


def write_loss_log(path: str | Path, records: Sequence[LossRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "l1", "l2", "total"])
        for r in records:
            w.writerow([r.iteration, repr(r.l1), repr(r.l2), repr(r.total)])


def smoothed(values: Sequence[float], window: int = 50) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return v.copy()
    return np.convolve(v, np.ones(window) / window, mode="valid")
