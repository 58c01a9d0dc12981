"""Minimal numerical core: tensors with reverse-mode gradients, graph layers,
Adam, clipping, initialisation and a finite-difference oracle."""

from scenegen.nn.gradcheck import finite_difference_gradient, max_relative_error
from scenegen.nn.kernels import BACKEND
from scenegen.nn.layers import (
    ParamStore,
    gat_forward,
    gcn_forward,
    mlp_forward,
    xavier_init,
)
from scenegen.nn.optim import AdamState, adam_step, bce, clip_gradients, mean_bce
from scenegen.nn.tensor import Tensor

__all__ = [
    "BACKEND",
    "AdamState",
    "ParamStore",
    "Tensor",
    "adam_step",
    "bce",
    "clip_gradients",
    "finite_difference_gradient",
    "gat_forward",
    "gcn_forward",
    "max_relative_error",
    "mean_bce",
    "mlp_forward",
    "xavier_init",
]
