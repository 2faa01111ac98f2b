"""Pure-numpy implementations of the hot kernels.

Used when the compiled extension is unavailable, and as the large-problem
path of the compiled backend (the offset-decomposed convolution hands its
inner products to BLAS, which beats direct loops once channels are wide).

All arrays are float64, C-contiguous, channel-first (C, H, W).
"""

import numpy as np


def conv_out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def _padded(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad)))


def conv2d(x, w, stride, pad):
    ci, h, wd = x.shape
    co, _, k, _ = w.shape
    ho = conv_out_size(h, k, stride, pad)
    wo = conv_out_size(wd, k, stride, pad)
    xp = _padded(x, pad)
    # BLAS only takes the fast path on contiguous operands
    wt = np.ascontiguousarray(w.transpose(2, 3, 0, 1))
    out = np.zeros((co, ho * wo))
    for dy in range(k):
        for dx in range(k):
            patch = xp[:, dy:dy + stride * (ho - 1) + 1:stride, dx:dx + stride * (wo - 1) + 1:stride]
            out += wt[dy, dx] @ patch.reshape(ci, ho * wo)
    return out.reshape(co, ho, wo)


def conv2d_grad_input(gy, w, in_shape, stride, pad):
    ci, h, wd = in_shape
    co, ho, wo = gy.shape
    k = w.shape[2]
    gxp = np.zeros((ci, h + 2 * pad, wd + 2 * pad))
    g = gy.reshape(co, ho * wo)
    wt = np.ascontiguousarray(w.transpose(2, 3, 1, 0))
    for dy in range(k):
        for dx in range(k):
            contrib = (wt[dy, dx] @ g).reshape(ci, ho, wo)
            gxp[:, dy:dy + stride * (ho - 1) + 1:stride, dx:dx + stride * (wo - 1) + 1:stride] += contrib
    if pad:
        return np.ascontiguousarray(gxp[:, pad:pad + h, pad:pad + wd])
    return gxp


def conv2d_grad_weight(x, gy, k, stride, pad):
    ci = x.shape[0]
    co, ho, wo = gy.shape
    xp = _padded(x, pad)
    g = gy.reshape(co, ho * wo)
    gw = np.empty((k, k, co, ci))
    for dy in range(k):
        for dx in range(k):
            patch = xp[:, dy:dy + stride * (ho - 1) + 1:stride, dx:dx + stride * (wo - 1) + 1:stride]
            gw[dy, dx] = g @ patch.reshape(ci, ho * wo).T
    return np.ascontiguousarray(gw.transpose(2, 3, 0, 1))


def lif_step(v, x, gain, v_rest, v_th):
    """Euler update, Heaviside with H(0) = 1, soft reset. Returns (v_new, spikes)."""
    v = v + gain * (x - (v - v_rest))
    s = (v >= v_th).astype(np.float64)
    return v - v_th * s, s


def accumulate(index, size):
    return np.bincount(index, minlength=size).astype(np.float64)
