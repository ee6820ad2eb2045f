"""Central finite-difference verification of the reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import blocks as B
from . import tensor as T
from .sampling import Conv
from .tensor import KinkPattern, Tensor, no_grad

# Elements are compared relative to themselves, but never relative to less than
# this fraction of the largest gradient in the same tensor.
SCALE_FLOOR = 1e-2


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    n_checked: int
    per_tensor: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} max relative error {self.max_rel_error:.3e} "
                f"(tol {self.tolerance:.1e}, {self.n_checked} coordinates)")


def relative_error(analytic, numeric, floor: float = 0.0) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)`` (0 where both are exactly 0)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    diff = np.abs(a - n)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, diff / np.where(denom > 0, denom, 1.0), 0.0)


def finite_difference_check(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-6,
    max_coords: int | None = None,
    seed: int = 0,
    names: Sequence[str] | None = None,
    freeze_kinks: bool = False,
) -> GradCheckReport:
    """Compare analytic gradients of ``sum(f() * R)`` against central differences.

    ``f`` closes over ``inputs`` (leaf tensors with ``requires_grad``) and is
    re-run with perturbed values; ``R`` is a fixed random projection so that
    every output element contributes. Numerical derivatives use the
    fourth-order central stencil on ``±step, ±2*step``.

    ``freeze_kinks`` replays the ReLU/PReLU/abs branch pattern of the
    unperturbed pass in every perturbed pass. Deep PReLU stacks have so many
    units that some pre-activation almost always lies within ``step`` of zero;
    freezing evaluates the smooth piece the analytic gradient belongs to.

    With ``max_coords`` only that many random coordinates per input are
    checked, otherwise all of them.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.grad = None
    pattern = KinkPattern()
    if freeze_kinks:
        with pattern.record():
            out = f()
    else:
        out = f()
    proj = rng.standard_normal(out.shape)
    (out * Tensor(proj)).sum().backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]

    def scalar() -> float:
        with no_grad():
            if freeze_kinks:
                with pattern.replay():
                    return float(np.sum(f().data * proj))
            return float(np.sum(f().data * proj))

    def derivative(flat: np.ndarray, i: int) -> float:
        orig = flat[i]
        vals = []
        for d in (step, -step, 2 * step, -2 * step):
            flat[i] = orig + d
            vals.append(scalar())
        flat[i] = orig
        d1 = (vals[0] - vals[1]) / (2 * step)
        d2 = (vals[2] - vals[3]) / (4 * step)
        return (4 * d1 - d2) / 3

    names = list(names) if names is not None else [f"input{i}" for i in range(len(inputs))]
    worst = 0.0
    per: dict[str, float] = {}
    total = 0
    for name, t, ga in zip(names, inputs, analytic):
        flat = t.data.reshape(-1)
        ga = ga.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        num = np.array([derivative(flat, int(i)) for i in idx])
        floor = SCALE_FLOOR * max(np.abs(ga).max(initial=0.0), np.abs(num).max(initial=0.0))
        err = relative_error(ga[idx], num, floor)
        e = float(err.max()) if err.size else 0.0
        per[name] = e
        worst = max(worst, e)
        total += len(idx)
    return GradCheckReport(worst, tolerance, total, per)


# -- named block checks -----------------------------------------------------

BLOCKS = ("tensor", "conv", "prelu", "se", "dcr", "wrnl", "mlc", "network")
DEFAULT_TOLERANCE = {"network": 1e-5}
# Branch patterns are frozen for the full network, which makes the objective
# smooth; the larger step then keeps cancellation error well below tolerance.
NETWORK_STEP = 1e-3


def _tensor_case(P):
    a, b, c = P(3, 4), P(4, 5), P(3, 5)

    def f():
        h = T.sigmoid(a @ b) * c + T.softmax_rows(a @ b)
        r = T.sqrt(T.square(h) + 1.0)
        return (r - T.mean(h, axis=1, keepdims=True)).transpose(1, 0).reshape(5, 3)

    return f, [a, b, c], ["a", "b", "c"]


def _conv_case(P):
    x, w3, b3, w1 = P(2, 3, 6, 6), P(5, 3, 3, 3), P(5), P(4, 5, 1, 1)
    return (lambda: T.conv2d(T.conv2d(x, w3, b3), w1)), [x, w3, b3, w1], ["x", "w3", "b3", "w1"]


def _prelu_case(P):
    x, s = P(2, 4, 5, 5), P(4)
    return (lambda: T.prelu(x, s)), [x, s], ["x", "slopes"]


def _se_case(P):
    x = P(2, 8, 6, 6)
    p = B.SeParams(P(8, 4), P(4, 8))
    return (lambda: B.se_forward(x, p)), [x, p.reduce, p.expand], ["x", "reduce", "expand"]


def _dcr_case(P):
    x = P(2, 6, 6, 6)
    p = B.DcrParams([Conv(P(6, 6 * k, 3, 3, scale=0.2), P(6)) for k in (1, 2, 3)], [P(6) for _ in range(3)])
    ins = [x] + [c.weight for c in p.convs] + [c.bias for c in p.convs] + list(p.slopes)
    names = ["x"] + [f"conv{k}.w" for k in (1, 2, 3)] + [f"conv{k}.b" for k in (1, 2, 3)] \
        + [f"prelu{k}" for k in (1, 2, 3)]
    return (lambda: B.dcr_forward(x, p)), ins, names


def _wrnl_case(P):
    x = P(2, 8, 8, 8)
    p = B.WrnlParams(P(8, 4, scale=0.3), P(8, 4, scale=0.3), P(8, 8, scale=0.3), Conv(P(8, 8, 1, 1), P(8)))
    grid = B.GridSpec(4, 2)
    ins = [x, p.w_theta, p.w_psi, p.w_g, p.proj.weight, p.proj.bias]
    return (lambda: B.wrnl_forward(x, grid, p)), ins, ["x", "theta", "psi", "g", "proj.w", "proj.b"]


def _mlc_case(P):
    enc = [P(1, 4, 16, 16), P(1, 8, 8, 8), P(1, 16, 4, 4)]
    dec = P(1, 16, 4, 4)
    p = B.MlcParams(fuse=Conv(P(8, 32, 1, 1), P(8)), se=B.SeParams(P(32, 4), P(4, 32)))
    ins = enc + [dec, p.fuse.weight, p.fuse.bias, p.se.reduce, p.se.expand]
    names = ["e1", "e2", "e3", "dec", "fuse.w", "fuse.b", "se.reduce", "se.expand"]
    return (lambda: B.mlc_fuse(enc, dec, 2, p)), ins, names


def _network_case(P, seed):
    from .network import NetworkConfig, build

    model = build(NetworkConfig.toy(), seed=seed)
    x = P(1, 3, 32, 32, scale=0.25)
    x.data += 0.5
    names = ["image"] + list(model.params)
    return (lambda: model(x)), [x] + list(model.params.values()), names


def check_block(block: str, seed: int = 0, tolerance: float | None = None,
                max_coords: int | None = None) -> GradCheckReport:
    """Finite-difference check of one named building block on random inputs.

    The full network uses the toy preset on a 32x32 image; only ``max_coords``
    coordinates per tensor (default 2) are probed there to bound the runtime.
    """
    if block not in BLOCKS:
        raise ValueError(f"unknown block {block!r}; expected one of {BLOCKS}")
    rng = np.random.default_rng(seed)

    def P(*shape, scale=1.0):
        return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)

    tol = tolerance if tolerance is not None else DEFAULT_TOLERANCE.get(block, 1e-6)
    if block == "network":
        f, ins, names = _network_case(P, seed)
        return finite_difference_check(f, ins, step=NETWORK_STEP, tolerance=tol,
                                       max_coords=2 if max_coords is None else max_coords,
                                       seed=seed, names=names, freeze_kinks=True)
    f, ins, names = {
        "tensor": _tensor_case, "conv": _conv_case, "prelu": _prelu_case, "se": _se_case,
        "dcr": _dcr_case, "wrnl": _wrnl_case, "mlc": _mlc_case,
    }[block](P)
    return finite_difference_check(f, ins, tolerance=tol, max_coords=max_coords, seed=seed, names=names)
