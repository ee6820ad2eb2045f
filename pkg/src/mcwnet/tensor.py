"""Small reverse-mode autodiff engine over float64 numpy arrays.

Every op returns a new :class:`Tensor`; when any operand requires a gradient
the op records its parents and a closure that maps the output gradient to
parent gradients. :meth:`Tensor.backward` replays that tape in reverse
topological order.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ConvSpec",
    "KinkPattern",
    "ShapeError",
    "no_grad",
    "tensor",
    "add",
    "sub",
    "mul",
    "mul_scalar",
    "matmul",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "square",
    "sqrt",
    "abs",
    "relu",
    "prelu",
    "sigmoid",
    "softmax_rows",
    "conv2d",
    "concat_channels",
    "global_avg_pool",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Run ops without recording a tape (inference only)."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class KinkPattern:
    """Discrete branch choices (ReLU/PReLU masks, abs signs) of one forward pass.

    Inside :meth:`record` every piecewise op stores its branch pattern; inside
    :meth:`replay` the same ops reuse the stored patterns in call order, so the
    forward pass evaluates the smooth piece that contains the recorded point.
    """

    def __init__(self):
        self.patterns: list[np.ndarray] = []
        self._pos = 0
        self._mode: str | None = None

    @contextlib.contextmanager
    def _active(self, mode: str):
        prev = getattr(_state, "kinks", None)
        self._mode, self._pos = mode, 0
        if mode == "record":
            self.patterns = []
        _state.kinks = self
        try:
            yield self
        finally:
            _state.kinks = prev
            self._mode = None

    def record(self):
        return self._active("record")

    def replay(self):
        return self._active("replay")

    def take(self, pattern: np.ndarray) -> np.ndarray:
        if self._mode == "record":
            self.patterns.append(pattern)
            return pattern
        if self._pos >= len(self.patterns):
            raise RuntimeError("replayed forward pass has more piecewise ops than the recording")
        stored = self.patterns[self._pos]
        self._pos += 1
        if stored.shape != pattern.shape:
            raise RuntimeError("replayed forward pass diverged from the recording")
        return stored


def _branch(pattern: np.ndarray) -> np.ndarray:
    kp = getattr(_state, "kinks", None)
    return pattern if kp is None else kp.take(pattern)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @classmethod
    def _make(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    ) -> "Tensor":
        """Wrap an op result; ``backward`` returns one grad per parent."""
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.grad = None
        out.name = None
        out.requires_grad = _grad_enabled() and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- basic properties -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # -- gradient handling ------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, output_grad: np.ndarray | "Tensor" | None = None) -> None:
        """Propagate ``output_grad`` (defaults to ones for a scalar) to every leaf."""
        if self._backward is None and not self.requires_grad:
            raise RuntimeError("backward() called on a tensor with no recorded computation")
        if output_grad is None:
            if self.size != 1:
                raise ShapeError("output_grad is required for non-scalar outputs")
            g = np.ones_like(self.data)
        else:
            g = np.asarray(output_grad.data if isinstance(output_grad, Tensor) else output_grad,
                           dtype=np.float64)
            if g.shape != self.shape:
                raise ShapeError(f"output_grad shape {g.shape} != output shape {self.shape}")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): g}
        for node in reversed(order):
            ng = grads.pop(id(node), None)
            if ng is None:
                continue
            if node._backward is None:
                node._accumulate(ng)
                continue
            for p, pg in zip(node._parents, node._backward(ng)):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.shape:
                    raise ShapeError(f"internal: grad {pg.shape} for operand {p.shape}")
                key = id(p)
                grads[key] = grads[key] + pg if key in grads else pg

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(tensor(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return mul_scalar(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def tensor(x, requires_grad: bool = False) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, requires_grad=requires_grad)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# -- elementwise ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_check(a, b, "add")
    return Tensor._make(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_check(a, b, "sub")
    return Tensor._make(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_check(a, b, "mul")
    return Tensor._make(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def mul_scalar(a: Tensor, c: float) -> Tensor:
    return Tensor._make(a.data * c, (a,), lambda g: (g * c,))


def square(a: Tensor) -> Tensor:
    return Tensor._make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def back(g):
        # Subgradient 0 at the origin keeps a perfect fit from producing NaN.
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0, 0.5 / np.where(out > 0, out, 1.0), 0.0)
        return (g * d,)

    return Tensor._make(out, (a,), back)


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    sign = _branch(np.sign(a.data))
    return Tensor._make(a.data * sign, (a,), lambda g: (g * sign,))


def relu(a: Tensor) -> Tensor:
    mask = _branch(a.data > 0)
    return Tensor._make(a.data * mask, (a,), lambda g: (g * mask,))


def prelu(x: Tensor, slopes: Tensor) -> Tensor:
    """Per-channel PReLU over axis 1: ``x`` if positive, else ``slope * x``."""
    if x.ndim < 2 or slopes.ndim != 1 or slopes.shape[0] != x.shape[1]:
        raise ShapeError(
            f"prelu: {slopes.shape[0] if slopes.ndim == 1 else slopes.shape} slopes "
            f"for input with shape {x.shape}"
        )
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    s = slopes.data.reshape(bshape)
    pos = _branch(x.data > 0)
    out = np.where(pos, x.data, s * x.data)

    def back(g):
        gx = np.where(pos, g, s * g)
        red = tuple(i for i in range(x.ndim) if i != 1)
        gs = np.where(pos, 0.0, g * x.data).sum(axis=red)
        return gx, gs

    return Tensor._make(out, (x, slopes), back)


def sigmoid(a: Tensor) -> Tensor:
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor._make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax along the last axis."""
    if a.ndim < 1:
        raise ShapeError("softmax_rows needs at least one axis")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return Tensor._make(out, (a,), back)


# -- reductions and shape ops ---------------------------------------------


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return Tensor._make(out, (a,), back)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul_scalar(sum(a, axis, keepdims), 1.0 / n)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return Tensor._make(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if not axes else tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = tensor(a), tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._make(a.data @ b.data, (a, b), back)


def concat_channels(parts: Iterable[Tensor]) -> Tensor:
    parts = [tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != len(ref) or p.shape[0] != ref[0] or p.shape[2:] != ref[2:]:
            raise ShapeError(f"concat_channels: {p.shape} does not align with {ref}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def back(g):
        return [g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts))]

    return Tensor._make(np.concatenate([p.data for p in parts], axis=1), parts, back)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean: (B, C, H, W) -> (B, C)."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects rank 4, got {x.shape}")
    return mean(x, axis=(2, 3))


# -- convolution ----------------------------------------------------------


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(f"channel counts must be positive: {self}")
        if self.kernel not in (1, 3):
            raise ValueError(f"kernel must be 1 or 3, got {self.kernel}")

    @property
    def padding(self) -> int:
        return (self.kernel - 1) // 2

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)

    @property
    def n_params(self) -> int:
        return int(np.prod(self.weight_shape)) + self.out_channels


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, spec: ConvSpec | None = None) -> Tensor:
    """Shape-preserving stride-1 cross-correlation with zero padding."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects (B, C, H, W) input, got {x.shape}")
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3] or weight.shape[2] not in (1, 3):
        raise ShapeError(f"conv2d weight must be (O, I, k, k) with k in (1, 3), got {weight.shape}")
    if spec is not None and weight.shape != spec.weight_shape:
        raise ShapeError(f"conv2d weight {weight.shape} does not match {spec}")
    cout, cin, k, _ = weight.shape
    if x.shape[1] != cin:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, weight expects {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    B, _, H, W = x.shape
    parents = (x, weight) if bias is None else (x, weight, bias)

    if k == 1:
        wm = weight.data[:, :, 0, 0]
        xf = x.data.reshape(B, cin, H * W)
        out = np.matmul(wm, xf).reshape(B, cout, H, W)
        if bias is not None:
            out += bias.data[None, :, None, None]

        def back1(g):
            gf = g.reshape(B, cout, H * W)
            gx = np.matmul(wm.T, gf).reshape(x.shape)
            gw = np.einsum("bop,bip->oi", gf, xf).reshape(weight.shape)
            grads = [gx, gw]
            if bias is not None:
                grads.append(g.sum(axis=(0, 2, 3)))
            return grads

        return Tensor._make(out, parents, back1)

    p = (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    offsets = [(i, j) for i in range(k) for j in range(k)]
    # (B, C, k*k, H, W) flattened to (B, C*k*k, H*W); column order matches weight.reshape(O, -1)
    cols = np.stack([xp[:, :, i:i + H, j:j + W] for i, j in offsets], axis=2)
    cols = cols.reshape(B, cin * k * k, H * W)
    wm = weight.data.reshape(cout, -1)
    out = np.matmul(wm, cols).reshape(B, cout, H, W)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def back3(g):
        gf = g.reshape(B, cout, H * W)
        gw = np.matmul(gf, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        dcols = np.matmul(wm.T, gf).reshape(B, cin, k * k, H, W)
        gxp = np.zeros_like(xp)
        for t, (i, j) in enumerate(offsets):
            gxp[:, :, i:i + H, j:j + W] += dcols[:, :, t]
        grads = [gxp[:, :, p:p + H, p:p + W], gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return Tensor._make(out, parents, back3)
