"""2-D Haar analysis/synthesis used for every resolution change.

Subbands are laid out in grouped channel blocks ``[LL | LH | HL | HH]``: for an
input with ``C`` channels, output channel ``s * C + c`` holds subband ``s`` of
input channel ``c``.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor

# Rows index the vertical offset inside the 2x2 block, columns the horizontal one.
F_LL = 0.25 * np.array([[1.0, 1.0], [1.0, 1.0]])
F_LH = 0.25 * np.array([[-1.0, -1.0], [1.0, 1.0]])
F_HL = 0.25 * np.array([[-1.0, 1.0], [-1.0, 1.0]])
F_HH = 0.25 * np.array([[1.0, -1.0], [-1.0, 1.0]])
HAAR_FILTERS = np.stack([F_LL, F_LH, F_HL, F_HH])  # (4, 2, 2)
SUBBANDS = ("LL", "LH", "HL", "HH")


def polyphase(x: np.ndarray) -> tuple[np.ndarray, ...]:
    """Top-left, top-right, bottom-left and bottom-right pixels of every 2x2 block."""
    return x[:, :, 0::2, 0::2], x[:, :, 0::2, 1::2], x[:, :, 1::2, 0::2], x[:, :, 1::2, 1::2]


def block_mean(x: np.ndarray) -> np.ndarray:
    a, b, c, d = polyphase(x)
    return 0.25 * ((a + b) + (c + d))


def _dwt_array(x: np.ndarray) -> np.ndarray:
    # rows of HAAR_FILTERS written out on the polyphase components
    a, b, c, d = polyphase(x)
    ll = block_mean(x)
    lh = 0.25 * ((c + d) - (a + b))
    hl = 0.25 * ((b + d) - (a + c))
    hh = 0.25 * ((a + d) - (b + c))
    return np.concatenate([ll, lh, hl, hh], axis=1)


def _iwt_array(y: np.ndarray) -> np.ndarray:
    # the filters are orthogonal with squared norm 1/4, so synthesis is 4 * F^T
    B, C4, h, w = y.shape
    ll, lh, hl, hh = np.split(y, 4, axis=1)
    x = np.empty((B, C4 // 4, 2 * h, 2 * w))
    x[:, :, 0::2, 0::2] = ll - lh - hl + hh
    x[:, :, 0::2, 1::2] = ll - lh + hl - hh
    x[:, :, 1::2, 0::2] = ll + lh - hl - hh
    x[:, :, 1::2, 1::2] = ll + lh + hl + hh
    return x


def dwt_haar(x: Tensor) -> Tensor:
    """One-level Haar analysis: (B, C, H, W) -> (B, 4C, H/2, W/2)."""
    if x.ndim != 4:
        raise ShapeError(f"dwt_haar expects (B, C, H, W), got {x.shape}")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"dwt_haar needs even spatial extents, got {x.shape[2]}x{x.shape[3]}")
    # Analysis matrix is F with rows scaled by 1/4 of the synthesis; its adjoint is iwt / 4.
    return Tensor._make(_dwt_array(x.data), (x,), lambda g: (_iwt_array(g) / 4.0,))


def iwt_haar(y: Tensor) -> Tensor:
    """Exact inverse of :func:`dwt_haar`: (B, 4C, H, W) -> (B, C, 2H, 2W)."""
    if y.ndim != 4:
        raise ShapeError(f"iwt_haar expects (B, 4C, H, W), got {y.shape}")
    if y.shape[1] % 4:
        raise ShapeError(f"iwt_haar needs a channel count divisible by 4, got {y.shape[1]}")
    return Tensor._make(_iwt_array(y.data), (y,), lambda g: (4.0 * _dwt_array(g),))


def resample(x: Tensor, from_level: int, to_level: int) -> Tensor:
    """Move a feature map between pyramid levels with repeated DWT (down) or IWT (up)."""
    steps = to_level - from_level
    if steps > 0:
        need = 2 ** steps
        if x.shape[2] % need or x.shape[3] % need:
            raise ShapeError(
                f"resample down {steps} levels needs spatial dims divisible by {need}, got {x.shape}"
            )
        for _ in range(steps):
            x = dwt_haar(x)
    elif steps < 0:
        need = 4 ** (-steps)
        if x.shape[1] % need:
            raise ShapeError(
                f"resample up {-steps} levels needs channels divisible by {need}, got {x.shape[1]}"
            )
        for _ in range(-steps):
            x = iwt_haar(x)
    return x
