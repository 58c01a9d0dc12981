# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled segment kernels; same contracts as ``_pykernels``."""

import numpy as np
from libc.math cimport exp, INFINITY
from libc.stdint cimport int64_t


def segment_sum(values, const int64_t[::1] seg, Py_ssize_t n):
    cdef double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64).reshape(len(seg), -1)
    cdef Py_ssize_t e, k, s, m = v.shape[0], d = v.shape[1]
    out_arr = np.zeros((n, d))
    cdef double[:, ::1] out = out_arr
    for e in range(m):
        s = seg[e]
        for k in range(d):
            out[s, k] += v[e, k]
    shape = (n,) + np.shape(values)[1:]
    return out_arr.reshape(shape)


def segment_max(values, const int64_t[::1] seg, Py_ssize_t n):
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    out_arr = np.full(n, -np.inf)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t e
    for e in range(v.shape[0]):
        if v[e] > out[seg[e]]:
            out[seg[e]] = v[e]
    return out_arr


def segment_softmax(logits, const int64_t[::1] seg, Py_ssize_t n):
    cdef const double[::1] x = np.ascontiguousarray(logits, dtype=np.float64)
    cdef Py_ssize_t e, m = x.shape[0]
    mx_arr = np.full(n, -INFINITY)
    den_arr = np.zeros(n)
    out_arr = np.empty(m)
    cdef double[::1] mx = mx_arr
    cdef double[::1] den = den_arr
    cdef double[::1] out = out_arr
    for e in range(m):
        if x[e] > mx[seg[e]]:
            mx[seg[e]] = x[e]
    for e in range(m):
        out[e] = exp(x[e] - mx[seg[e]])
        den[seg[e]] += out[e]
    for e in range(m):
        out[e] /= den[seg[e]]
    return out_arr


def segment_softmax_backward(alpha, grad, const int64_t[::1] seg, Py_ssize_t n):
    cdef const double[::1] a = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef const double[::1] g = np.ascontiguousarray(grad, dtype=np.float64)
    cdef Py_ssize_t e, m = a.shape[0]
    dot_arr = np.zeros(n)
    out_arr = np.empty(m)
    cdef double[::1] dot = dot_arr
    cdef double[::1] out = out_arr
    for e in range(m):
        dot[seg[e]] += a[e] * g[e]
    for e in range(m):
        out[e] = a[e] * (g[e] - dot[seg[e]])
    return out_arr
