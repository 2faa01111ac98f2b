# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled direct-loop kernels.

Same contracts as ``_pykernels``. Each output element is reduced in a fixed
order, so results are bitwise reproducible run to run.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv2d(const double[:, :, ::1] x, const double[:, :, :, ::1] w, int stride, int pad):
    cdef Py_ssize_t ci = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t co = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * pad - k) // stride + 1
    out_arr = np.zeros((co, ho, wo))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t o, c, ky, kx, oy, ox, iy, ix, ox0, ox1
    cdef double wv
    for o in range(co):
        for c in range(ci):
            for ky in range(k):
                for kx in range(k):
                    wv = w[o, c, ky, kx]
                    if wv == 0.0:
                        continue
                    # valid ox range: 0 <= ox*stride + kx - pad < wd
                    ox0 = 0
                    while ox0 < wo and ox0 * stride + kx - pad < 0:
                        ox0 += 1
                    ox1 = wo
                    while ox1 > ox0 and (ox1 - 1) * stride + kx - pad >= wd:
                        ox1 -= 1
                    for oy in range(ho):
                        iy = oy * stride + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        for ox in range(ox0, ox1):
                            out[o, oy, ox] += wv * x[c, iy, ox * stride + kx - pad]
    return out_arr


def conv2d_grad_input(const double[:, :, ::1] gy, const double[:, :, :, ::1] w,
                      tuple in_shape, int stride, int pad):
    cdef Py_ssize_t ci = in_shape[0], h = in_shape[1], wd = in_shape[2]
    cdef Py_ssize_t co = gy.shape[0], ho = gy.shape[1], wo = gy.shape[2]
    cdef Py_ssize_t k = w.shape[2]
    gx_arr = np.zeros((ci, h, wd))
    cdef double[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t o, c, ky, kx, oy, ox, iy, ox0, ox1
    cdef double wv
    for o in range(co):
        for c in range(ci):
            for ky in range(k):
                for kx in range(k):
                    wv = w[o, c, ky, kx]
                    if wv == 0.0:
                        continue
                    ox0 = 0
                    while ox0 < wo and ox0 * stride + kx - pad < 0:
                        ox0 += 1
                    ox1 = wo
                    while ox1 > ox0 and (ox1 - 1) * stride + kx - pad >= wd:
                        ox1 -= 1
                    for oy in range(ho):
                        iy = oy * stride + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        for ox in range(ox0, ox1):
                            gx[c, iy, ox * stride + kx - pad] += wv * gy[o, oy, ox]
    return gx_arr


def conv2d_grad_weight(const double[:, :, ::1] x, const double[:, :, ::1] gy,
                       int k, int stride, int pad):
    cdef Py_ssize_t ci = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t co = gy.shape[0], ho = gy.shape[1], wo = gy.shape[2]
    gw_arr = np.zeros((co, ci, k, k))
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef Py_ssize_t o, c, ky, kx, oy, ox, iy, ox0, ox1
    cdef double acc
    for o in range(co):
        for c in range(ci):
            for ky in range(k):
                for kx in range(k):
                    ox0 = 0
                    while ox0 < wo and ox0 * stride + kx - pad < 0:
                        ox0 += 1
                    ox1 = wo
                    while ox1 > ox0 and (ox1 - 1) * stride + kx - pad >= wd:
                        ox1 -= 1
                    acc = 0.0
                    for oy in range(ho):
                        iy = oy * stride + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        for ox in range(ox0, ox1):
                            acc += gy[o, oy, ox] * x[c, iy, ox * stride + kx - pad]
                    gw[o, c, ky, kx] = acc
    return gw_arr


def lif_step(const double[::1] v, const double[::1] x, double gain, double v_rest, double v_th):
    cdef Py_ssize_t n = v.shape[0], i
    v_arr = np.empty(n)
    s_arr = np.empty(n)
    cdef double[::1] vn = v_arr
    cdef double[::1] s = s_arr
    cdef double u
    for i in range(n):
        u = v[i] + gain * (x[i] - (v[i] - v_rest))
        if u >= v_th:
            s[i] = 1.0
            vn[i] = u - v_th
        else:
            s[i] = 0.0
            vn[i] = u
    return v_arr, s_arr


def accumulate(const cnp.int64_t[::1] index, Py_ssize_t size):
    out_arr = np.zeros(size)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    for i in range(index.shape[0]):
        out[index[i]] += 1.0
    return out_arr
