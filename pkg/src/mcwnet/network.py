"""Full encoder/decoder network: configuration, parameter layout, forward pass and loss."""

from __future__ import annotations

import dataclasses
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import tensor as T
from .blocks import (
    DcrParams,
    GridSpec,
    MlcParams,
    SeParams,
    WrnlParams,
    check_fusion,
    dcr_forward,
    mlc_fuse,
    mlc_part_channels,
    mlc_sources,
    se_hidden,
    wrnl_forward,
)
from .sampling import Conv, check_mode, down, sampled_channels, step_conv_specs
from .tensor import ConvSpec, ShapeError, Tensor

LEVELS = 4
ENCODER_LEVELS = (1, 2, 3)
DECODER_LEVELS = (4, 3, 2, 1)
REGIONS = ("wide", "square", "tall")
DEFAULT_GRIDS = (GridSpec(16, 4), GridSpec(8, 2), GridSpec(4, 1), GridSpec(4, 1))
TOY_GRIDS = (GridSpec(4, 2), GridSpec(2, 2), GridSpec(2, 1), GridSpec(2, 1))
# Width of level l is base_channels * WIDTH_MULTIPLIERS[l-1]; the x4 jump into the
# bottleneck mirrors the channel growth of one DWT step.
WIDTH_MULTIPLIERS = (1, 2, 4, 16)
INPUT_MULTIPLE = 32


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    base_channels: int = 8
    levels: int = LEVELS
    wrnl_grids: tuple[GridSpec, ...] = DEFAULT_GRIDS
    sampling: str = "dwt"
    mlc_fusion: str = "se"
    wrnl_region: str = "wide"
    global_residual: bool = True
    width_multipliers: tuple[int, ...] = WIDTH_MULTIPLIERS
    wrnl_residual: bool = True
    wrnl_after_dcr: bool = True
    se_reduction: int = 16

    def __post_init__(self):
        grids = tuple(g if isinstance(g, GridSpec) else GridSpec(*g) for g in self.wrnl_grids)
        object.__setattr__(self, "wrnl_grids", grids)
        object.__setattr__(self, "width_multipliers", tuple(int(m) for m in self.width_multipliers))
        self.validate()

    @classmethod
    def small(cls, **kw) -> "NetworkConfig":
        kw.setdefault("base_channels", 8)
        return cls(**kw)

    @classmethod
    def large(cls, **kw) -> "NetworkConfig":
        kw.setdefault("base_channels", 64)
        return cls(**kw)

    @classmethod
    def toy(cls, **kw) -> "NetworkConfig":
        kw.setdefault("wrnl_grids", TOY_GRIDS)
        kw.setdefault("base_channels", 4)
        return cls(**kw)

    @classmethod
    def preset(cls, size: str, **kw) -> "NetworkConfig":
        try:
            return {"small": cls.small, "large": cls.large, "toy": cls.toy}[size](**kw)
        except KeyError:
            raise ConfigError(f"unknown size preset {size!r}") from None

    def validate(self) -> None:
        if self.levels != LEVELS:
            raise ConfigError(f"only {LEVELS} levels are supported, got {self.levels}")
        if self.base_channels < 4 or self.base_channels % 2:
            raise ConfigError(f"base_channels must be even and >= 4, got {self.base_channels}")
        if len(self.wrnl_grids) != LEVELS or len(self.width_multipliers) != LEVELS:
            raise ConfigError("wrnl_grids and width_multipliers need one entry per level")
        if self.wrnl_region not in REGIONS:
            raise ConfigError(f"unknown WRNL region {self.wrnl_region!r}")
        try:
            check_mode(self.sampling)
            check_fusion(self.mlc_fusion)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        for w in self.widths:
            if w % 2:
                raise ConfigError(f"level widths must be even, got {self.widths}")
        try:
            for level in DECODER_LEVELS:
                mlc_part_channels(self.widths, level, self.mlc_fusion, self.sampling)
        except ShapeError as e:
            raise ConfigError(f"width schedule {self.widths} cannot be resampled: {e}") from None

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(self.base_channels * m for m in self.width_multipliers)

    @property
    def grids(self) -> tuple[GridSpec, ...]:
        """Effective per-level grids after applying the region type."""
        return tuple(g.remap(self.wrnl_region) for g in self.wrnl_grids)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["wrnl_grids"] = [[g.a, g.b] for g in self.wrnl_grids]
        d["width_multipliers"] = list(self.width_multipliers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "wrnl_grids" in d:
            d["wrnl_grids"] = tuple(GridSpec(int(a), int(b)) for a, b in d["wrnl_grids"])
        if "width_multipliers" in d:
            d["width_multipliers"] = tuple(d["width_multipliers"])
        return cls(**d)


# -- parameter layout -------------------------------------------------------


def _conv_shapes(name: str, spec: ConvSpec, bias: bool = True):
    yield f"{name}.w", spec.weight_shape
    if bias:
        yield f"{name}.b", (spec.out_channels,)


def _stage_shapes(prefix: str, c: int):
    for d in range(2):
        for k in range(1, 4):
            yield from _conv_shapes(f"{prefix}.dcr{d}.conv{k}", ConvSpec(k * c, c, 3))
            yield f"{prefix}.dcr{d}.prelu{k}", (c,)
    yield f"{prefix}.wrnl.theta", (c, c // 2)
    yield f"{prefix}.wrnl.psi", (c, c // 2)
    yield f"{prefix}.wrnl.g", (c, c)
    yield from _conv_shapes(f"{prefix}.wrnl.proj", ConvSpec(c, c, 1))


def param_shapes(config: NetworkConfig) -> "OrderedDict[str, tuple[int, ...]]":
    """Name -> shape for every learnable array, in a fixed order."""
    w = config.widths
    mode = config.sampling
    out: OrderedDict[str, tuple[int, ...]] = OrderedDict()

    def put(items):
        for k, v in items:
            out[k] = tuple(v)

    put(_conv_shapes("head.conv", ConvSpec(3, w[0], 3)))
    out["head.prelu"] = (w[0],)
    for level in ENCODER_LEVELS:
        c = w[level - 1]
        put(_stage_shapes(f"enc{level}", c))
        if level < 3:
            for s, spec in enumerate(step_conv_specs(c, 1, mode)):
                put(_conv_shapes(f"enc{level}.down.s{s}", spec))
            put(_conv_shapes(
                f"enc{level}.down.proj", ConvSpec(sampled_channels(c, 1, mode), w[level], 1)
            ))
    for level in DECODER_LEVELS:
        c = w[level - 1]
        pre = f"dec{level}.mlc"
        sources = mlc_sources(level, config.mlc_fusion)
        parts = mlc_part_channels(w, level, config.mlc_fusion, mode)
        for key, src in sources:
            for s, spec in enumerate(step_conv_specs(w[src - 1], level - src, mode)):
                put(_conv_shapes(f"{pre}.samp.{key}.s{s}", spec))
        if config.mlc_fusion == "add":
            for k, pc in enumerate(parts):
                put(_conv_shapes(f"{pre}.add{k}", ConvSpec(pc, c, 1)))
        else:
            total = sum(parts)
            if config.mlc_fusion == "se":
                h = se_hidden(total, config.se_reduction)
                out[f"{pre}.se.reduce"] = (total, h)
                out[f"{pre}.se.expand"] = (h, total)
            put(_conv_shapes(f"{pre}.fuse", ConvSpec(total, c, 1)))
        put(_stage_shapes(f"dec{level}", c))
    put(_conv_shapes("tail.conv", ConvSpec(w[0], 3, 3)))
    return out


def param_count(config: NetworkConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(config).values()))


def param_breakdown(config: NetworkConfig) -> "OrderedDict[str, int]":
    """Parameter totals grouped by top-level module (head, enc1.., dec4.., tail)."""
    groups: OrderedDict[str, int] = OrderedDict()
    for name, shape in param_shapes(config).items():
        top = name.split(".")[0]
        if top.startswith("dec") and ".mlc." in name:
            top += ".mlc"
        groups[top] = groups.get(top, 0) + int(np.prod(shape))
    return groups


def init_array(name: str, shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    if name.endswith(".b"):
        return np.zeros(shape)
    if "prelu" in name:
        return np.full(shape, 0.25)
    if len(shape) == 4:
        rf = shape[2] * shape[3]
        fan_in, fan_out = shape[1] * rf, shape[0] * rf
    else:
        fan_in, fan_out = shape
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def _n_sampling_convs(steps: int, mode: str) -> int:
    return abs(steps) if mode == "conv1x1_stride2" else 0


# -- model ------------------------------------------------------------------


@dataclass
class Model:
    config: NetworkConfig
    params: "OrderedDict[str, Tensor]"
    _views: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        expected = param_shapes(self.config)
        if list(expected) != list(self.params):
            missing = set(expected) - set(self.params)
            extra = set(self.params) - set(expected)
            raise ShapeError(f"parameter names do not match config (missing {sorted(missing)[:3]}, "
                             f"extra {sorted(extra)[:3]})")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeError(f"{name}: shape {self.params[name].shape}, config expects {shape}")
        self._views = self._make_views()

    # structured views share the Tensor objects in ``params``
    def _conv(self, name: str) -> Conv:
        return Conv(self.params[f"{name}.w"], self.params.get(f"{name}.b"))

    def _stage(self, prefix: str):
        dcrs = [
            DcrParams(
                [self._conv(f"{prefix}.dcr{d}.conv{k}") for k in range(1, 4)],
                [self.params[f"{prefix}.dcr{d}.prelu{k}"] for k in range(1, 4)],
            )
            for d in range(2)
        ]
        wrnl = WrnlParams(
            self.params[f"{prefix}.wrnl.theta"],
            self.params[f"{prefix}.wrnl.psi"],
            self.params[f"{prefix}.wrnl.g"],
            self._conv(f"{prefix}.wrnl.proj"),
        )
        return dcrs, wrnl

    def _make_views(self) -> dict:
        cfg = self.config
        v: dict = {"head": self._conv("head.conv"), "tail": self._conv("tail.conv")}
        for level in ENCODER_LEVELS:
            v[f"enc{level}"] = self._stage(f"enc{level}")
            if level < 3:
                samp = [self._conv(f"enc{level}.down.s{s}")
                        for s in range(_n_sampling_convs(1, cfg.sampling))]
                v[f"enc{level}.down"] = (samp[0] if samp else None, self._conv(f"enc{level}.down.proj"))
        for level in DECODER_LEVELS:
            pre = f"dec{level}.mlc"
            mlc = MlcParams()
            for key, src in mlc_sources(level, cfg.mlc_fusion):
                n = _n_sampling_convs(level - src, cfg.sampling)
                if n:
                    mlc.samplers[key] = [self._conv(f"{pre}.samp.{key}.s{s}") for s in range(n)]
            if cfg.mlc_fusion == "add":
                k = 0
                while f"{pre}.add{k}.w" in self.params:
                    mlc.add_convs.append(self._conv(f"{pre}.add{k}"))
                    k += 1
            else:
                mlc.fuse = self._conv(f"{pre}.fuse")
                if cfg.mlc_fusion == "se":
                    mlc.se = SeParams(self.params[f"{pre}.se.reduce"], self.params[f"{pre}.se.expand"])
            v[pre] = mlc
            v[f"dec{level}"] = self._stage(f"dec{level}")
        return v

    def view(self, key: str):
        return self._views[key]

    def parameters(self) -> Iterator[Tensor]:
        return iter(self.params.values())

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def __call__(self, image: Tensor, trace: dict | None = None) -> Tensor:
        return forward(self, image, trace)


def build(config: NetworkConfig, seed: int = 0) -> Model:
    rng = np.random.default_rng(seed)
    params = OrderedDict(
        (name, Tensor(init_array(name, shape, rng), requires_grad=True, name=name))
        for name, shape in param_shapes(config).items()
    )
    return Model(config, params)


def _run_stage(x: Tensor, stage, grid: GridSpec, config: NetworkConfig) -> Tensor:
    dcrs, wrnl = stage
    if not config.wrnl_after_dcr:
        x = wrnl_forward(x, grid, wrnl, residual=config.wrnl_residual)
    for p in dcrs:
        x = dcr_forward(x, p)
    if config.wrnl_after_dcr:
        x = wrnl_forward(x, grid, wrnl, residual=config.wrnl_residual)
    return x


def forward(model: Model, image: Tensor, trace: dict | None = None) -> Tensor:
    """Run the network on a (B, 3, H, W) batch; H and W must be multiples of 32.

    If ``trace`` is a dict, per-level MLC intermediates are stored under
    ``trace[level]`` (see :func:`mcwnet.blocks.mlc_fuse`).
    """
    cfg = model.config
    x = T.tensor(image)
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"expected a (B, 3, H, W) image batch, got {x.shape}")
    H, W = x.shape[2:]
    if H % INPUT_MULTIPLE or W % INPUT_MULTIPLE:
        raise ShapeError(f"input size {H}x{W} is not a multiple of {INPUT_MULTIPLE}")
    grids = cfg.grids

    h = T.prelu(model.view("head")(x), model.params["head.prelu"])
    enc = []
    for level in ENCODER_LEVELS:
        h = _run_stage(h, model.view(f"enc{level}"), grids[level - 1], cfg)
        enc.append(h)
        if level < 3:
            samp, proj = model.view(f"enc{level}.down")
            h = proj(down(h, cfg.sampling, samp))

    d = None
    for level in DECODER_LEVELS:
        lt = None
        if trace is not None:
            lt = trace.setdefault(level, {})
        din = mlc_fuse(enc, d, level, model.view(f"dec{level}.mlc"),
                       cfg.mlc_fusion, cfg.sampling, trace=lt)
        d = _run_stage(din, model.view(f"dec{level}"), grids[level - 1], cfg)

    out = model.view("tail")(d)
    return x + out if cfg.global_residual else out


# -- loss -------------------------------------------------------------------


def loss_terms(pred: Tensor, target) -> tuple[Tensor, Tensor]:
    """Mean absolute error and root-mean-square error of ``pred - target``."""
    target = T.tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"loss: prediction {pred.shape} vs target {target.shape}")
    e = pred - target
    return T.mean(T.abs(e)), T.sqrt(T.mean(T.square(e)))


def loss_l1l2(pred: Tensor, target) -> Tensor:
    l1, l2 = loss_terms(pred, target)
    return l1 + l2
