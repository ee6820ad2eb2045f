"""Down/up-sampling operators selectable for the sampling ablation.

``dwt``             Haar DWT down (C -> 4C), IWT up (4C -> C).
``mean_pool``       2x2 average pooling down, nearest-neighbour up; channels unchanged.
``conv1x1_stride2`` stride-2 subsampling + learned 1x1 conv (C -> 4C) down,
                    learned 1x1 conv (4C -> 4C) + pixel shuffle up. Same shapes as ``dwt``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import wavelet
from .tensor import ConvSpec, ShapeError, Tensor, conv2d

SAMPLING_MODES = ("dwt", "mean_pool", "conv1x1_stride2")


@dataclass
class Conv:
    """A convolution's parameters; calling it applies the layer."""

    weight: Tensor
    bias: Tensor | None = None

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias)

    @property
    def spec(self) -> ConvSpec:
        o, i, k, _ = self.weight.shape
        return ConvSpec(i, o, k)


def avg_pool2(x: Tensor) -> Tensor:
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"avg_pool2 needs even spatial extents, got {H}x{W}")
    out = wavelet.block_mean(x.data)

    def back(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0,)

    return Tensor._make(out, (x,), back)


def upsample_nearest2(x: Tensor) -> Tensor:
    B, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def back(g):
        return (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),)

    return Tensor._make(out, (x,), back)


def subsample2(x: Tensor) -> Tensor:
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"subsample2 needs even spatial extents, got {H}x{W}")

    def back(g):
        gx = np.zeros(x.shape)
        gx[:, :, ::2, ::2] = g
        return (gx,)

    return Tensor._make(x.data[:, :, ::2, ::2].copy(), (x,), back)


def pixel_shuffle2(x: Tensor) -> Tensor:
    """(B, 4C, H, W) -> (B, C, 2H, 2W) using the grouped subband layout of the IWT."""
    B, C4, H, W = x.shape
    if C4 % 4:
        raise ShapeError(f"pixel_shuffle2 needs channels divisible by 4, got {C4}")
    C = C4 // 4
    return x.reshape(B, 2, 2, C, H, W).transpose(0, 3, 4, 1, 5, 2).reshape(B, C, 2 * H, 2 * W)


def check_mode(mode: str) -> None:
    if mode not in SAMPLING_MODES:
        raise ValueError(f"unknown sampling mode {mode!r}; expected one of {SAMPLING_MODES}")


def sampled_channels(channels: int, steps: int, mode: str) -> int:
    """Channel count after moving ``steps`` levels down (positive) or up (negative)."""
    check_mode(mode)
    if mode == "mean_pool" or steps == 0:
        return channels
    if steps > 0:
        return channels * 4 ** steps
    div = 4 ** (-steps)
    if channels % div:
        raise ShapeError(f"cannot move {channels} channels up {-steps} levels (needs /{div})")
    return channels // div


def step_conv_specs(channels: int, steps: int, mode: str) -> list[ConvSpec]:
    """Learned 1x1 convs needed by a multi-step resample (only for ``conv1x1_stride2``)."""
    if mode != "conv1x1_stride2" or steps == 0:
        return []
    specs = []
    c = channels
    for _ in range(abs(steps)):
        if steps > 0:
            specs.append(ConvSpec(c, 4 * c, 1))
            c *= 4
        else:
            specs.append(ConvSpec(c, c, 1))
            c //= 4
    return specs


def down(x: Tensor, mode: str = "dwt", conv: Conv | None = None) -> Tensor:
    if mode == "dwt":
        return wavelet.dwt_haar(x)
    if mode == "mean_pool":
        return avg_pool2(x)
    if mode == "conv1x1_stride2":
        if conv is None:
            raise ValueError("conv1x1_stride2 down-sampling needs a conv")
        return conv(subsample2(x))
    check_mode(mode)
    raise AssertionError(mode)


def up(x: Tensor, mode: str = "dwt", conv: Conv | None = None) -> Tensor:
    if mode == "dwt":
        return wavelet.iwt_haar(x)
    if mode == "mean_pool":
        return upsample_nearest2(x)
    if mode == "conv1x1_stride2":
        if conv is None:
            raise ValueError("conv1x1_stride2 up-sampling needs a conv")
        return pixel_shuffle2(conv(x))
    check_mode(mode)
    raise AssertionError(mode)


def resample(
    x: Tensor,
    from_level: int,
    to_level: int,
    mode: str = "dwt",
    convs: Sequence[Conv] = (),
) -> Tensor:
    """Level-to-level resampling; for ``dwt`` this is exactly :func:`wavelet.resample`."""
    check_mode(mode)
    steps = to_level - from_level
    if mode == "dwt":
        return wavelet.resample(x, from_level, to_level)
    if mode == "conv1x1_stride2" and len(convs) != abs(steps):
        raise ValueError(f"need {abs(steps)} sampling convs, got {len(convs)}")
    for k in range(abs(steps)):
        conv = convs[k] if mode == "conv1x1_stride2" else None
        x = down(x, mode, conv) if steps > 0 else up(x, mode, conv)
    return x
