"""Rain pairs: synthetic generation, dataset I/O and aligned random crops."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .imageio import IMAGE_SUFFIXES, read_image, write_image

CROP_MULTIPLE = 32


@dataclass
class RainPair:
    rainy: np.ndarray  # H x W x 3, float in [0, 1]
    clean: np.ndarray
    id: str = ""

    def __post_init__(self):
        self.rainy = np.clip(np.asarray(self.rainy, dtype=np.float64), 0.0, 1.0)
        self.clean = np.clip(np.asarray(self.clean, dtype=np.float64), 0.0, 1.0)
        if self.rainy.shape != self.clean.shape:
            raise ValueError(f"pair {self.id!r}: rainy {self.rainy.shape} vs clean {self.clean.shape}")
        if self.rainy.ndim != 3 or self.rainy.shape[-1] != 3:
            raise ValueError(f"pair {self.id!r}: expected H x W x 3 images, got {self.rainy.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.rainy.shape[:2]


@dataclass(frozen=True)
class StreakParams:
    count: int = 40
    length: tuple[float, float] = (10.0, 30.0)
    width: int = 1
    angle_jitter: float = 10.0  # degrees, uniform in [-jitter, jitter]
    intensity: tuple[float, float] = (0.3, 0.6)
    angle: float = 0.0  # mean direction in degrees from vertical

    def check(self) -> None:
        lo, hi = self.length
        if self.count < 0:
            raise ValueError(f"streak count must be >= 0, got {self.count}")
        if lo <= 0 or hi < lo:
            raise ValueError(f"streak length range must be positive and ordered, got {self.length}")
        if self.width < 1:
            raise ValueError(f"streak width must be >= 1, got {self.width}")
        if not 0 <= self.angle_jitter <= 10:
            raise ValueError(f"angle jitter must lie in [0, 10] degrees, got {self.angle_jitter}")
        ilo, ihi = self.intensity
        if ilo <= 0 or ihi < ilo:
            raise ValueError(f"intensity range must be positive and ordered, got {self.intensity}")


def streak_pixels(center: tuple[float, float], length: float, angle_deg: float, width: int,
                  shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Unique (rows, cols) covered by one straight streak, clipped to the image."""
    H, W = shape
    th = math.radians(angle_deg)
    dy, dx = math.cos(th), math.sin(th)
    t = np.arange(-length / 2, length / 2 + 0.25, 0.5)
    offs = np.arange(width) - (width - 1) / 2.0
    ys = center[0] + t[:, None] * dy - offs[None, :] * dx
    xs = center[1] + t[:, None] * dx + offs[None, :] * dy
    r = np.rint(ys).astype(int).ravel()
    c = np.rint(xs).astype(int).ravel()
    keep = (r >= 0) & (r < H) & (c >= 0) & (c < W)
    flat = np.unique(r[keep] * W + c[keep])
    return flat // W, flat % W


def synth_clean(size: int | tuple[int, int], seed: int) -> np.ndarray:
    """Smooth random background: colour gradient plus a few soft blobs, values in [0.05, 0.7]."""
    H, W = (size, size) if isinstance(size, int) else size
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:H, 0:W] / max(H, W)
    c0, c1 = rng.uniform(0.1, 0.5, 3), rng.uniform(0.1, 0.5, 3)
    ang = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(ang) * yy + np.sin(ang) * xx)
    ramp = (ramp - ramp.min()) / (np.ptp(ramp) + 1e-12)
    img = c0 + (c1 - c0) * ramp[..., None]
    for _ in range(rng.integers(2, 5)):
        cy, cx = rng.uniform(0, 1, 2)
        s = rng.uniform(0.08, 0.25)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        img = img + rng.uniform(-0.2, 0.25, 3) * blob[..., None]
    return np.clip(img, 0.05, 0.7)


def synth_rain(clean: np.ndarray, seed: int, params: StreakParams = StreakParams(),
               pair_id: str = "") -> tuple[RainPair, np.ndarray]:
    """Overlay additive bright streaks; returns the pair and the boolean streak mask."""
    params.check()
    clean = np.asarray(clean, dtype=np.float64)
    if clean.ndim != 3 or clean.shape[-1] != 3:
        raise ValueError(f"expected an H x W x 3 clean image, got {clean.shape}")
    H, W = clean.shape[:2]
    rng = np.random.default_rng(seed)
    layer = np.zeros((H, W))
    for _ in range(params.count):
        center = (rng.uniform(0, H), rng.uniform(0, W))
        length = rng.uniform(*params.length)
        angle = params.angle + rng.uniform(-params.angle_jitter, params.angle_jitter)
        rows, cols = streak_pixels(center, length, angle, params.width, (H, W))
        layer[rows, cols] += rng.uniform(*params.intensity)
    rainy = np.clip(clean + layer[..., None], 0.0, 1.0)
    return RainPair(rainy, clean, pair_id), layer > 0


def synth_dataset(n: int, size: int = 64, seed: int = 0,
                  params: StreakParams = StreakParams()) -> list[RainPair]:
    """``n`` deterministic synthetic pairs; pair ``k`` uses seeds derived from ``(seed, k)``."""
    pairs = []
    for k in range(n):
        s_clean, s_rain = np.random.SeedSequence([seed, k]).generate_state(2)
        clean = synth_clean(size, int(s_clean))
        pair, _ = synth_rain(clean, int(s_rain), params, pair_id=f"synth{k:04d}")
        pairs.append(pair)
    return pairs


def random_crop(pair: RainPair, edge: int, seed: int | np.random.Generator) -> RainPair:
    """Crop the same ``edge x edge`` window out of both images."""
    if edge % CROP_MULTIPLE:
        raise ValueError(f"crop edge must be a multiple of {CROP_MULTIPLE}, got {edge}")
    H, W = pair.shape
    if H < edge or W < edge:
        raise ValueError(f"pair {pair.id!r} is {H}x{W}, smaller than the {edge} crop")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    top = int(rng.integers(0, H - edge + 1))
    left = int(rng.integers(0, W - edge + 1))
    win = (slice(top, top + edge), slice(left, left + edge))
    return RainPair(pair.rainy[win], pair.clean[win], pair.id)


def load_dataset(root: str | Path) -> list[RainPair]:
    """Read ``<root>/rainy/<id>.png`` and ``<root>/clean/<id>.png`` pairs, matched by stem."""
    root = Path(root)
    rainy_dir, clean_dir = root / "rainy", root / "clean"
    for d in (rainy_dir, clean_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"missing dataset directory {d}")

    def index(d: Path) -> dict[str, Path]:
        return {p.stem: p for p in sorted(d.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}

    rainy, clean = index(rainy_dir), index(clean_dir)
    ids = sorted(set(rainy) & set(clean))
    if not ids:
        raise FileNotFoundError(f"no matching rainy/clean image pairs under {root}")
    return [RainPair(read_image(rainy[i]), read_image(clean[i]), i) for i in ids]


def save_dataset(pairs: Sequence[RainPair], root: str | Path, suffix: str = ".png") -> None:
    root = Path(root)
    for sub in ("rainy", "clean"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for p in pairs:
        write_image(root / "rainy" / f"{p.id}{suffix}", p.rainy)
        write_image(root / "clean" / f"{p.id}{suffix}", p.clean)
