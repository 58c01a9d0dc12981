"""Parameter store, initialisation and the layer functions of the model."""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator

import numpy as np

from scenegen.nn import tensor as T
from scenegen.nn.tensor import Tensor

LEAKY_SLOPE = 0.2


class ParamStore:
    """Named parameters in insertion order."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def n_values(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self._params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in snap.items():
            if self._params[k].shape != v.shape:
                raise ValueError(f"shape mismatch for {k}: {self._params[k].shape} vs {v.shape}")
            self._params[k].data = v.copy()


def xavier_init(rng_seed, shape: tuple[int, int]) -> np.ndarray:
    """Glorot-uniform matrix; ``rng_seed`` may be an int or a numpy Generator."""
    if len(shape) != 2:
        raise ValueError("xavier_init expects a 2-D (fan_in, fan_out) shape")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    bound = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape)


def init_mlp(store: ParamStore, name: str, dims: list[int], rng: np.random.Generator) -> None:
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        store.add(f"{name}.W{i}", xavier_init(rng, (a, b)))
        store.add(f"{name}.b{i}", np.zeros((1, b)))


def mlp_forward(store: ParamStore, name: str, x: Tensor, dims: list[int]) -> Tensor:
    """Affine layers ``dims[i] -> dims[i+1]`` with ReLU between them."""
    if x.shape[-1] != dims[0]:
        raise ValueError(f"{name}: input width {x.shape[-1]} != {dims[0]}")
    h = x
    last = len(dims) - 2
    for i in range(len(dims) - 1):
        h = T.matmul(h, store[f"{name}.W{i}"]) + store[f"{name}.b{i}"]
        if i < last:
            h = T.relu(h)
    return h


def init_gat(store: ParamStore, name: str, d_in: int, d_out: int, rng: np.random.Generator,
             d_edge: int = 1) -> None:
    store.add(f"{name}.W", xavier_init(rng, (d_in, d_out)))
    store.add(f"{name}.U", xavier_init(rng, (d_edge, d_out)))
    store.add(f"{name}.a", xavier_init(rng, (3 * d_out, 1)))


def gat_attention(store: ParamStore, name: str, h: Tensor, e: Tensor, src, dst, n: int,
                  edge_mode: str = "both") -> tuple[Tensor, Tensor, np.ndarray, np.ndarray]:
    """Shared part of the GAT layer; returns (alpha, messages, src', dst')
    where the primed index arrays include one implicit self edge per node."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if len(src) and (src.max() >= n or dst.max() >= n or src.min() < 0 or dst.min() < 0):
        raise IndexError(f"{name}: edge endpoint outside [0, {n})")
    W, U, a = store[f"{name}.W"], store[f"{name}.U"], store[f"{name}.a"]
    d = W.shape[1]
    loops = np.arange(n, dtype=np.int64)
    s2 = np.concatenate([src, loops])
    d2 = np.concatenate([dst, loops])
    wh = T.matmul(h, W)
    ue = T.concat([T.matmul(e, U), Tensor(np.zeros((n, d)))], axis=0)  # implicit self edge: e = 0
    score = T.gather(T.matmul(wh, T.slice_rows(a, 0, d)), s2) + T.gather(T.matmul(wh, T.slice_rows(a, d, 2 * d)), d2)
    if edge_mode in ("both", "attention"):
        score = score + T.matmul(ue, T.slice_rows(a, 2 * d, 3 * d))
    alpha = T.segment_softmax(T.leaky_relu(score, LEAKY_SLOPE), d2, n)
    msg = T.gather(wh, s2)
    if edge_mode in ("both", "message"):
        msg = msg + ue
    return alpha, msg, s2, d2


def gat_forward(store: ParamStore, name: str, h: Tensor, e: Tensor, src, dst,
                edge_mode: str = "both") -> Tensor:
    """Single-head graph attention with edge features.

    For an edge i -> j: message ``W h_i + U e_ij``; logit
    ``LeakyReLU(a . [W h_i | W h_j | U e_ij])``; softmax over the incoming
    edges of j, which always include an implicit self edge with e = 0.
    """
    n = h.shape[0]
    alpha, msg, _, d2 = gat_attention(store, name, h, e, src, dst, n, edge_mode)
    return T.segment_sum(msg * alpha, d2, n)


def init_gcn(store: ParamStore, name: str, d_in: int, d_out: int, rng: np.random.Generator) -> None:
    store.add(f"{name}.W", xavier_init(rng, (d_in, d_out)))


def gcn_norm(src, dst, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Directed message list (from, to, weight) for a symmetric-normalised
    aggregation with self loops over the undirected edges ``src``-``dst``."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    deg = np.bincount(np.concatenate([src, dst]), minlength=n).astype(np.float64) + 1.0
    loops = np.arange(n, dtype=np.int64)
    frm = np.concatenate([src, dst, loops])
    to = np.concatenate([dst, src, loops])
    w = 1.0 / np.sqrt(deg[frm] * deg[to])
    return frm, to, w


def gcn_forward(store: ParamStore, name: str, h: Tensor, src, dst) -> Tensor:
    n = h.shape[0]
    frm, to, w = gcn_norm(src, dst, n)
    hw = T.matmul(h, store[f"{name}.W"])
    return T.segment_sum(T.gather(hw, frm) * w[:, None], to, n)


def init_gru(store: ParamStore, name: str, d_in: int, d_hidden: int, rng: np.random.Generator) -> None:
    for gate in ("z", "r", "n"):
        store.add(f"{name}.W{gate}", xavier_init(rng, (d_in, d_hidden)))
        store.add(f"{name}.U{gate}", xavier_init(rng, (d_hidden, d_hidden)))
        store.add(f"{name}.b{gate}", np.zeros((1, d_hidden)))


def gru_cell(store: ParamStore, name: str, x: Tensor, h: Tensor) -> Tensor:
    def lin(gate, hh):
        return T.matmul(x, store[f"{name}.W{gate}"]) + T.matmul(hh, store[f"{name}.U{gate}"]) + store[f"{name}.b{gate}"]

    z = T.sigmoid(lin("z", h))
    r = T.sigmoid(lin("r", h))
    cand = T.tanh(lin("n", r * h))
    return (1.0 - z) * cand + z * h

