"""8-bit PNG / binary PPM (P6) image I/O; images are H x W x 3 float arrays in [0, 1]."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

IMAGE_SUFFIXES = (".png", ".ppm")


class ImageReadError(OSError):
    pass


def read_image(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() not in IMAGE_SUFFIXES:
        raise ImageReadError(f"{path}: only PNG and PPM images are supported")
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (FileNotFoundError, UnidentifiedImageError, OSError) as e:
        raise ImageReadError(f"cannot read image {path}: {e}") from e
    return arr / 255.0


def quantize(img: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path: str | Path, img: np.ndarray) -> None:
    path = Path(path)
    fmt = {".png": "PNG", ".ppm": "PPM"}.get(path.suffix.lower())
    if fmt is None:
        raise ValueError(f"{path}: output must be .png or .ppm")
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError(f"expected an H x W x 3 image, got {img.shape}")
    Image.fromarray(quantize(img), mode="RGB").save(path, format=fmt)


def to_batch(img: np.ndarray) -> np.ndarray:
    """H x W x 3 (or a stack N x H x W x 3) -> N x 3 x H x W."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        img = img[None]
    return np.ascontiguousarray(img.transpose(0, 3, 1, 2))


def from_batch(batch: np.ndarray) -> np.ndarray:
    """N x 3 x H x W -> N x H x W x 3."""
    return np.ascontiguousarray(np.asarray(batch).transpose(0, 2, 3, 1))
