"""Kernel dispatch: compiled core when importable, numpy otherwise.

Set ``HYBRIDSNN_BACKEND=python`` before import to force the numpy path.
The compiled backend still routes wide convolutions to the numpy/BLAS
path; direct loops only win while the per-call work is small.
"""

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_c = None
if os.environ.get("HYBRIDSNN_BACKEND", "auto").lower() != "python":
    try:
        from . import _ckernels as _c

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _c = None

# multiply count above which BLAS beats the direct loops (see benchmarks/)
DIRECT_CONV_LIMIT = 300_000


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _use_direct(co, ci, k, ho, wo):
    return _c is not None and co * ci * k * k * ho * wo <= DIRECT_CONV_LIMIT


def conv2d(x, w, stride=1, pad=0):
    x, w = _f64(x), _f64(w)
    ho = _pykernels.conv_out_size(x.shape[1], w.shape[2], stride, pad)
    wo = _pykernels.conv_out_size(x.shape[2], w.shape[2], stride, pad)
    if _use_direct(w.shape[0], w.shape[1], w.shape[2], ho, wo):
        return _c.conv2d(x, w, stride, pad)
    return _pykernels.conv2d(x, w, stride, pad)


def conv2d_grad_input(gy, w, in_shape, stride=1, pad=0):
    gy, w = _f64(gy), _f64(w)
    if _use_direct(w.shape[0], w.shape[1], w.shape[2], gy.shape[1], gy.shape[2]):
        return _c.conv2d_grad_input(gy, w, tuple(in_shape), stride, pad)
    return _pykernels.conv2d_grad_input(gy, w, tuple(in_shape), stride, pad)


def conv2d_grad_weight(x, gy, k, stride=1, pad=0):
    x, gy = _f64(x), _f64(gy)
    if _use_direct(gy.shape[0], x.shape[0], k, gy.shape[1], gy.shape[2]):
        return _c.conv2d_grad_weight(x, gy, k, stride, pad)
    return _pykernels.conv2d_grad_weight(x, gy, k, stride, pad)


def lif_step(v, x, gain, v_rest, v_th):
    v, x = _f64(v), _f64(x)
    if _c is not None:
        vn, s = _c.lif_step(v.ravel(), x.ravel(), float(gain), float(v_rest), float(v_th))
        return vn.reshape(v.shape), s.reshape(v.shape)
    return _pykernels.lif_step(v, x, gain, v_rest, v_th)


def accumulate(index, size):
    """Histogram of non-negative integer indices into ``size`` float bins."""
    index = np.ascontiguousarray(index, dtype=np.int64)
    if _c is not None:
        return _c.accumulate(index, size)
    return _pykernels.accumulate(index, size)
