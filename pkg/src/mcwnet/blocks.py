"""Building blocks: DCR block, SE channel attention, wide regional non-local
block (WRNL) and the multi-level connection (MLC) fusion in front of each
decoder stage."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from . import tensor as T
from .sampling import Conv, resample, sampled_channels
from .tensor import ShapeError, Tensor

FUSION_MODES = ("se", "concat", "add", "none")


# -- grids ----------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """``a`` patches stacked vertically by ``b`` patches across."""

    a: int
    b: int

    def __post_init__(self):
        if self.a < 1 or self.b < 1:
            raise ValueError(f"grid counts must be >= 1, got {self.a}x{self.b}")

    @property
    def kind(self) -> str:
        if self.a > self.b:
            return "wide"
        if self.a == self.b:
            return "square"
        return "tall"

    @property
    def n_patches(self) -> int:
        return self.a * self.b

    def check(self, height: int, width: int) -> None:
        if height % self.a or width % self.b:
            raise ShapeError(
                f"{height}x{width} feature map is not divisible by a {self.a}x{self.b} grid"
            )

    def remap(self, region: str) -> "GridSpec":
        """Same patch budget, reshaped to the requested region type.

        ``wide`` keeps the larger count vertical, ``tall`` swaps it to the
        horizontal axis, ``square`` uses the largest ``s`` with ``s*s <= a*b``.
        """
        hi, lo = max(self.a, self.b), min(self.a, self.b)
        if region == "wide":
            return GridSpec(hi, lo)
        if region == "tall":
            return GridSpec(lo, hi)
        if region == "square":
            s = math.isqrt(self.a * self.b)
            return GridSpec(s, s)
        raise ValueError(f"unknown region type {region!r}")

    def __str__(self) -> str:
        return f"{self.a}x{self.b}"


def patchify(x: Tensor, grid: GridSpec) -> Tensor:
    """(B, C, H, W) -> (B*a*b, H/a * W/b, C); patch-major, row-major inside a patch."""
    B, C, H, W = x.shape
    grid.check(H, W)
    ph, pw = H // grid.a, W // grid.b
    y = x.reshape(B, C, grid.a, ph, grid.b, pw).transpose(0, 2, 4, 3, 5, 1)
    return y.reshape(B * grid.n_patches, ph * pw, C)


def unpatchify(z: Tensor, grid: GridSpec, shape: Sequence[int]) -> Tensor:
    B, C, H, W = shape
    ph, pw = H // grid.a, W // grid.b
    y = z.reshape(B, grid.a, grid.b, ph, pw, C).transpose(0, 5, 1, 3, 2, 4)
    return y.reshape(B, C, H, W)


# -- WRNL -----------------------------------------------------------------


@dataclass
class WrnlParams:
    w_theta: Tensor  # (C, C/2)
    w_psi: Tensor  # (C, C/2)
    w_g: Tensor  # (C, C)
    proj: Conv  # 1x1, C -> C

    @property
    def channels(self) -> int:
        return self.w_g.shape[0]

    def check(self, channels: int) -> None:
        C = channels
        if C % 2:
            raise ShapeError(f"WRNL needs an even channel count, got {C}")
        L = C // 2
        want = {"w_theta": (C, L), "w_psi": (C, L), "w_g": (C, C)}
        for name, shp in want.items():
            if getattr(self, name).shape != shp:
                raise ShapeError(f"WRNL {name} has shape {getattr(self, name).shape}, want {shp}")
        if self.proj.weight.shape != (C, C, 1, 1):
            raise ShapeError(f"WRNL projection has shape {self.proj.weight.shape}")


def wrnl_attention(x: Tensor, grid: GridSpec, params: WrnlParams) -> tuple[Tensor, Tensor]:
    """Regional embedded-Gaussian attention.

    Returns the aggregated feature map ``Z`` (same shape as ``x``) and the
    attention weights of shape ``(B*a*b, P, P)`` where row ``i`` holds the
    normalised weights of query position ``i`` over the keys of its patch.
    """
    if x.ndim != 4:
        raise ShapeError(f"WRNL expects (B, C, H, W), got {x.shape}")
    params.check(x.shape[1])
    xp = patchify(x, grid)
    theta = T.matmul(xp, params.w_theta)
    psi = T.matmul(xp, params.w_psi)
    g = T.matmul(xp, params.w_g)
    attn = T.softmax_rows(T.matmul(theta, psi.transpose(0, 2, 1)))
    # Values are indexed by the key position j, as in the standard non-local block.
    z = T.matmul(attn, g)
    return unpatchify(z, grid, x.shape), attn


def wrnl_forward(x: Tensor, grid: GridSpec, params: WrnlParams, residual: bool = True) -> Tensor:
    z, _ = wrnl_attention(x, grid, params)
    out = params.proj(z)
    return x + out if residual else out


# -- SE -------------------------------------------------------------------


def se_hidden(channels: int, reduction: int = 16) -> int:
    """Bottleneck width: C/r, but never fewer than 4 units (or C when C < 4)."""
    return max(min(4, channels), channels // reduction)


@dataclass
class SeParams:
    reduce: Tensor  # (C, C/r)
    expand: Tensor  # (C/r, C)

    def check(self, channels: int) -> None:
        h = self.reduce.shape[1]
        if self.reduce.shape != (channels, h) or self.expand.shape != (h, channels):
            raise ShapeError(
                f"SE weights {self.reduce.shape}/{self.expand.shape} do not fit {channels} channels"
            )


def se_scales(x: Tensor, params: SeParams) -> Tensor:
    """Per-channel gates in (0, 1), shape (B, C)."""
    if x.ndim != 4:
        raise ShapeError(f"SE expects (B, C, H, W), got {x.shape}")
    params.check(x.shape[1])
    s = T.global_avg_pool(x)
    s = T.relu(T.matmul(s, params.reduce))
    return T.sigmoid(T.matmul(s, params.expand))


def se_forward(x: Tensor, params: SeParams) -> Tensor:
    s = se_scales(x, params)
    return x * s.reshape(x.shape[0], x.shape[1], 1, 1)


# -- DCR ------------------------------------------------------------------


@dataclass
class DcrParams:
    convs: list[Conv]  # inputs C, 2C, 3C -> C each
    slopes: list[Tensor]  # per-channel PReLU slopes, (C,) each

    def check(self, channels: int) -> None:
        if len(self.convs) != 3 or len(self.slopes) != 3:
            raise ShapeError("DCR block needs three convolutions and three PReLU slope vectors")
        for k, (conv, s) in enumerate(zip(self.convs, self.slopes), start=1):
            want = (channels, k * channels, 3, 3)
            if conv.weight.shape != want:
                raise ShapeError(f"DCR conv {k} has shape {conv.weight.shape}, want {want}")
            if s.shape != (channels,):
                raise ShapeError(f"DCR slopes {k} have shape {s.shape}, want ({channels},)")


def dcr_forward(x: Tensor, params: DcrParams) -> Tensor:
    params.check(x.shape[1])
    feats = [x]
    for conv, slopes in zip(params.convs, params.slopes):
        inp = feats[0] if len(feats) == 1 else T.concat_channels(feats)
        feats.append(T.prelu(conv(inp), slopes))
    return x + feats[-1]


# -- MLC ------------------------------------------------------------------


@dataclass
class MlcParams:
    """Fusion parameters for one decoder level.

    ``samplers`` maps a source key (``"e1"``, ``"e2"``, ``"e3"``, ``"dec"``)
    to the learned convs of its resampling path; empty unless sampling is
    ``conv1x1_stride2``.
    """

    fuse: Conv | None = None
    se: SeParams | None = None
    add_convs: list[Conv] = field(default_factory=list)
    samplers: dict[str, list[Conv]] = field(default_factory=dict)


def mlc_sources(level: int, fusion_mode: str) -> list[tuple[str, int]]:
    """(key, source level) of every part concatenated at decoder ``level``.

    The previous decoder output (key ``"dec"``, level ``level + 1``) is absent
    at the deepest level. With fusion ``none`` only the same-level encoder
    output is kept (the third one at level 4, which has no encoder stage).
    """
    if level not in (1, 2, 3, 4):
        raise ValueError(f"decoder level must be 1..4, got {level}")
    check_fusion(fusion_mode)
    if fusion_mode == "none":
        src = [(f"e{min(level, 3)}", min(level, 3))]
    else:
        src = [(f"e{i}", i) for i in (1, 2, 3)]
    if level < 4:
        src.append(("dec", level + 1))
    return src


def mlc_part_channels(
    widths: Sequence[int], level: int, fusion_mode: str, sampling: str = "dwt"
) -> list[int]:
    """Channel count of each concatenated part at ``level`` given per-level widths."""
    return [
        sampled_channels(widths[src - 1], level - src, sampling)
        for _, src in mlc_sources(level, fusion_mode)
    ]


def check_fusion(mode: str) -> None:
    if mode not in FUSION_MODES:
        raise ValueError(f"unknown MLC fusion mode {mode!r}; expected one of {FUSION_MODES}")


def mlc_fuse(
    encoder_outs: Sequence[Tensor],
    prev_decoder: Tensor | None,
    level: int,
    params: MlcParams,
    fusion_mode: str = "se",
    sampling: str = "dwt",
    trace: dict | None = None,
) -> Tensor:
    """Build the decoder input at ``level`` from all encoder outputs.

    Every encoder output is resampled to ``level``; the previous decoder
    output is up-sampled once. The parts are concatenated and fused by
    ``fusion_mode``: ``se`` (SE gate then 1x1 conv), ``concat`` (1x1 conv),
    ``add`` (one 1x1 conv per part, summed) or ``none`` (same-level skip and
    decoder term only, through a 1x1 conv).

    When ``trace`` is given it receives the concatenated tensor, the SE output
    (``se`` mode only) and the channel boundaries of each part.
    """
    if len(encoder_outs) != 3:
        raise ValueError(f"expected three encoder outputs, got {len(encoder_outs)}")
    sources = mlc_sources(level, fusion_mode)
    if level < 4 and prev_decoder is None:
        raise ValueError(f"decoder level {level} needs the level-{level + 1} decoder output")

    parts = []
    for key, src in sources:
        x = prev_decoder if key == "dec" else encoder_outs[src - 1]
        parts.append(resample(x, src, level, sampling, params.samplers.get(key, ())))

    if fusion_mode == "add":
        if len(params.add_convs) != len(parts):
            raise ShapeError(f"add fusion needs {len(parts)} convs, got {len(params.add_convs)}")
        out = params.add_convs[0](parts[0])
        for conv, p in zip(params.add_convs[1:], parts[1:]):
            out = out + conv(p)
        return out

    concat = T.concat_channels(parts)
    if trace is not None:
        bounds = [0]
        for p in parts:
            bounds.append(bounds[-1] + p.shape[1])
        trace["concat"] = concat
        trace["bounds"] = bounds
        trace["keys"] = [k for k, _ in sources]
    fused = concat
    if fusion_mode == "se":
        if params.se is None:
            raise ValueError("se fusion needs SE parameters")
        fused = se_forward(concat, params.se)
        if trace is not None:
            trace["se"] = fused
    if params.fuse is None:
        raise ValueError(f"{fusion_mode} fusion needs a 1x1 conv")
    return params.fuse(fused)
