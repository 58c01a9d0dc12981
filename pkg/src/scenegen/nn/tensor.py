"""A small reverse-mode autodiff tensor over float64 numpy arrays.

Only the operations the scene-graph model needs are provided. Every op
records its parents and a closure that pushes the output gradient back.
"""

from __future__ import annotations

import numpy as np

from scenegen.nn import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data) if grad is None else grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    node.grad = None  # interior buffers are not needed after propagation

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __matmul__ = lambda self, o: matmul(self, o)
    __neg__ = lambda self: mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=parents if req else (), _backward=backward if req else None)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: x._accum(g * mask))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope)
    return _make(x.data * scale, (x,), lambda g: x._accum(g * scale))


def sigmoid(x: Tensor) -> Tensor:
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ez = np.exp(x.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _make(out, (x,), lambda g: x._accum(g * out * (1.0 - out)))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: x._accum(g * (1.0 - out * out)))


def power(x: Tensor, p: float) -> Tensor:
    """Elementwise ``x ** p`` for positive ``x``."""
    out = x.data ** p
    return _make(out, (x,), lambda g: x._accum(g * p * x.data ** (p - 1.0)))


def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def bw(g):
        for p, gp in zip(parts, np.split(g, sizes, axis=axis)):
            p._accum(gp)

    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bw)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    def bw(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        x._accum(full)

    return _make(x.data[start:stop], (x,), bw)


def gather(x: Tensor, idx: np.ndarray) -> Tensor:
    """Rows ``x[idx]``; the gradient scatters back with a segment sum."""
    idx = np.asarray(idx, dtype=np.int64)
    n = x.shape[0]
    return _make(x.data[idx], (x,), lambda g: x._accum(kernels.segment_sum(g, idx, n)))


def segment_sum(x: Tensor, seg: np.ndarray, n: int) -> Tensor:
    seg = np.asarray(seg, dtype=np.int64)
    return _make(kernels.segment_sum(x.data, seg, n), (x,), lambda g: x._accum(g[seg]))


def segment_softmax(logits: Tensor, seg: np.ndarray, n: int) -> Tensor:
    """Softmax over entries sharing a segment id; ``logits`` has shape (E,) or (E, 1)."""
    seg = np.asarray(seg, dtype=np.int64)
    shape = logits.shape
    alpha = kernels.segment_softmax(logits.data.reshape(-1), seg, n)

    def bw(g):
        logits._accum(kernels.segment_softmax_backward(alpha, g.reshape(-1), seg, n).reshape(shape))

    return _make(alpha.reshape(shape), (logits,), bw)


def total(x: Tensor) -> Tensor:
    return _make(np.array(x.data.sum()), (x,), lambda g: x._accum(np.full_like(x.data, float(g))))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return _make(np.array(x.data.mean()), (x,), lambda g: x._accum(np.full_like(x.data, float(g) / n)))


def bce_mean(probs: Tensor, labels: np.ndarray, eps: float = 1e-12) -> Tensor:
    """Mean binary cross-entropy with predictions clamped to [eps, 1 - eps]."""
    y = np.asarray(labels, dtype=np.float64).reshape(probs.shape)
    p_raw = probs.data
    p = np.clip(p_raw, eps, 1.0 - eps)
    n = p.size
    loss = -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    inside = (p_raw >= eps) & (p_raw <= 1.0 - eps)

    def bw(g):
        d = -(y / p - (1.0 - y) / (1.0 - p)) / n
        probs._accum(float(g) * d * inside)

    return _make(np.array(loss), (probs,), bw)
