"""Numpy implementations of the segment kernels (fallback backend)."""

import numpy as np


def segment_sum(values, seg, n):
    values = np.asarray(values, dtype=np.float64)
    out = np.zeros((n,) + values.shape[1:])
    np.add.at(out, seg, values)
    return out


def segment_max(values, seg, n):
    out = np.full(n, -np.inf)
    np.maximum.at(out, seg, np.asarray(values, dtype=np.float64))
    return out


def segment_softmax(logits, seg, n):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = np.exp(logits - segment_max(logits, seg, n)[seg])
    denom = np.zeros(n)
    np.add.at(denom, seg, shifted)
    return shifted / denom[seg]


def segment_softmax_backward(alpha, grad, seg, n):
    dot = np.zeros(n)
    np.add.at(dot, seg, alpha * grad)
    return alpha * (grad - dot[seg])
