"""Segment kernels used by the graph layers.

The compiled extension is preferred; set ``SCENEGEN_PURE_PYTHON=1`` (or build
without Cython) to run on the numpy fallback. ``BACKEND`` names the active one.
"""

import os

import numpy as np

from scenegen.nn import _pykernels

_impl = _pykernels
BACKEND = "python"
if os.environ.get("SCENEGEN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from scenegen.nn import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass


def _seg(seg):
    return np.ascontiguousarray(seg, dtype=np.int64)


def segment_sum(values, seg, n):
    """Sum rows of ``values`` into ``n`` buckets given by ``seg``."""
    return _impl.segment_sum(values, _seg(seg), n)


def segment_max(values, seg, n):
    return _impl.segment_max(values, _seg(seg), n)


def segment_softmax(logits, seg, n):
    """Softmax of ``logits`` within each segment (max-shifted)."""
    return _impl.segment_softmax(logits, _seg(seg), n)


def segment_softmax_backward(alpha, grad, seg, n):
    return _impl.segment_softmax_backward(alpha, grad, _seg(seg), n)
