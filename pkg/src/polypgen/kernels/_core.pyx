# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the hot loops: 3x3 convolution and pairwise distances.

Loop nests mirror the numpy fallback in ``_ref`` so both backends produce
bit-identical results (the build also disables FP contraction).
"""

import numpy as np


def conv3x3_forward(double[:, :, ::1] x, double[:, :, :, ::1] w, double[::1] b):
    cdef Py_ssize_t c_in = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t c_out = w.shape[0]
    out = np.empty((c_out, h, wd))
    cdef double[:, :, ::1] y = out
    cdef Py_ssize_t co, ci, ky, kx, yy, xx, sy, sx
    cdef double acc
    for co in range(c_out):
        for yy in range(h):
            for xx in range(wd):
                acc = b[co]
                for ci in range(c_in):
                    for ky in range(3):
                        sy = yy + ky - 1
                        if sy < 0 or sy >= h:
                            continue
                        for kx in range(3):
                            sx = xx + kx - 1
                            if sx < 0 or sx >= wd:
                                continue
                            acc = acc + w[co, ci, ky, kx] * x[ci, sy, sx]
                y[co, yy, xx] = acc
    return out


def conv3x3_backward(double[:, :, ::1] x, double[:, :, :, ::1] w,
                     double[:, :, ::1] gy):
    cdef Py_ssize_t c_in = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t c_out = w.shape[0]
    gx_arr = np.zeros((c_in, h, wd))
    gw_arr = np.zeros((c_out, c_in, 3, 3))
    gb_arr = np.zeros(c_out)
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t co, ci, ky, kx, yy, xx, sy, sx
    cdef double g

    # gb and gw accumulate over spatial positions in row-major order.
    for yy in range(h):
        for xx in range(wd):
            for co in range(c_out):
                g = gy[co, yy, xx]
                gb[co] = gb[co] + g
                for ci in range(c_in):
                    for ky in range(3):
                        sy = yy + ky - 1
                        if sy < 0 or sy >= h:
                            continue
                        for kx in range(3):
                            sx = xx + kx - 1
                            if sx < 0 or sx >= wd:
                                continue
                            gw[co, ci, ky, kx] = gw[co, ci, ky, kx] + g * x[ci, sy, sx]

    # gx accumulates contributions ordered by (co, ky, kx).
    for co in range(c_out):
        for ky in range(3):
            for kx in range(3):
                for ci in range(c_in):
                    for yy in range(h):
                        sy = yy + ky - 1
                        if sy < 0 or sy >= h:
                            continue
                        for xx in range(wd):
                            sx = xx + kx - 1
                            if sx < 0 or sx >= wd:
                                continue
                            gx[ci, sy, sx] = gx[ci, sy, sx] + w[co, ci, ky, kx] * gy[co, yy, xx]
    return gx_arr, gw_arr, gb_arr


def pairwise_sqdist(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], c = a.shape[1]
    out = np.zeros((n, m))
    cdef double[:, ::1] d2 = out
    cdef Py_ssize_t i, j, k
    cdef double acc, d
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(c):
                d = a[i, k] - b[j, k]
                acc = acc + d * d
            d2[i, j] = acc
    return out
