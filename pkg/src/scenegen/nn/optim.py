"""Adam with decoupled weight decay, elementwise gradient clipping, BCE."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from scenegen.nn.layers import ParamStore

EPS_CLAMP = 1e-12


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "weight_decay": self.weight_decay, "step": self.step,
            "m": {k: a.ravel().tolist() for k, a in self.m.items()},
            "v": {k: a.ravel().tolist() for k, a in self.v.items()},
        }

    @classmethod
    def from_json(cls, doc: dict, store: ParamStore) -> "AdamState":
        st = cls(**{k: doc[k] for k in ("lr", "beta1", "beta2", "eps", "weight_decay", "step")})
        for key, target in (("m", st.m), ("v", st.v)):
            for name, flat in doc[key].items():
                shape = store[name].shape
                arr = np.asarray(flat, dtype=np.float64)
                if arr.size != int(np.prod(shape)):
                    raise ValueError(f"optimizer moment {name} does not match parameter shape {shape}")
                target[name] = arr.reshape(shape)
        return st


def adam_step(store: ParamStore, state: AdamState) -> None:
    """Decoupled weight decay, then a bias-corrected Adam update; zeroes grads."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in store.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if state.weight_decay:
            p.data -= state.lr * state.weight_decay * p.data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None


def clip_gradients(store: ParamStore, bound: float = 1.0) -> None:
    for name, p in store.items():
        if p.grad is None:
            continue
        if not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient in {name}")
        np.clip(p.grad, -bound, bound, out=p.grad)


def bce(y: float, y_hat: float, eps: float = EPS_CLAMP) -> float:
    p = min(max(y_hat, eps), 1.0 - eps)
    return -(y * math.log(p) + (1.0 - y) * math.log(1.0 - p))


def mean_bce(y, y_hat, eps: float = EPS_CLAMP) -> float:
    y = np.asarray(y, dtype=np.float64)
    p = np.clip(np.asarray(y_hat, dtype=np.float64), eps, 1.0 - eps)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
