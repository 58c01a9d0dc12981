"""Central finite-difference gradients, the oracle for the analytic ones."""

from __future__ import annotations

from typing import Callable

import numpy as np

from scenegen.nn.layers import ParamStore


def finite_difference_gradient(
    loss_fn: Callable[[], float],
    store: ParamStore,
    h: float = 1e-5,
    max_per_param: int | None = None,
    rng_seed: int = 0,
) -> dict[str, np.ndarray]:
    """Numeric gradient per parameter via (L(θ+h) - L(θ-h)) / 2h.

    With ``max_per_param`` only that many randomly chosen components of each
    parameter are probed; the rest are NaN in the returned arrays.
    """
    rng = np.random.default_rng(rng_seed)
    out = {}
    for name, p in store.items():
        flat = p.data.reshape(-1)
        grad = np.full(flat.size, np.nan)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = np.sort(rng.choice(flat.size, size=max_per_param, replace=False))
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            up = float(loss_fn())
            flat[i] = old - h
            down = float(loss_fn())
            flat[i] = old
            grad[i] = (up - down) / (2.0 * h)
        out[name] = grad.reshape(p.shape)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """|a - n| / max(|a| + |n|, floor), elementwise; NaN entries are skipped by callers."""
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)


def max_relative_error(analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray]) -> float:
    worst = 0.0
    for name, num in numeric.items():
        a = analytic[name]
        mask = ~np.isnan(num)
        if mask.any():
            worst = max(worst, float(relative_error(a[mask], num[mask]).max()))
    return worst
