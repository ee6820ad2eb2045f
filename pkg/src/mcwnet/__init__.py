"""Desk-scale single-image deraining network with multi-level connections and
wide regional non-local attention, on a small numpy autodiff engine."""

from .network import Model, NetworkConfig, build, forward, loss_l1l2, param_count
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "Model",
    "NetworkConfig",
    "Tensor",
    "build",
    "forward",
    "loss_l1l2",
    "no_grad",
    "param_count",
]
