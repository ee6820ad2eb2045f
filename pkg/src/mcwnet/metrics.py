"""Image quality metrics on float RGB images in [0, 1] (H x W x 3 arrays)."""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate1d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr_rgb(a, b, peak: float = 1.0) -> float:
    """PSNR over all RGB values; ``math.inf`` for identical images."""
    a, b = _check_pair(a, b)
    if a.ndim != 3 or a.shape[-1] != 3:
        raise ValueError(f"expected H x W x 3 images, got {a.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return w / w.sum()


def _filter_valid(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    out = correlate1d(correlate1d(img, w, axis=0, mode="constant"), w, axis=1, mode="constant")
    r = (len(w) - 1) // 2
    return out[r:-r, r:-r]


def ssim_map(a, b, data_range: float = 1.0) -> np.ndarray:
    """Local SSIM over the valid region of a 2-D (single channel) image pair."""
    a, b = _check_pair(a, b)
    if a.ndim != 2:
        raise ValueError(f"ssim_map works on single-channel images, got {a.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    w = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _filter_valid(a, w)
    mu_b = _filter_valid(b, w)
    var_a = _filter_valid(a * a, w) - mu_a ** 2
    var_b = _filter_valid(b * b, w) - mu_b ** 2
    cov = _filter_valid(a * b, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM; colour images are scored per channel and averaged."""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        return float(ssim_map(a, b, data_range).mean())
    if a.ndim != 3:
        raise ValueError(f"expected H x W or H x W x C images, got {a.shape}")
    return float(np.mean([ssim_map(a[..., c], b[..., c], data_range).mean()
                          for c in range(a.shape[-1])]))
