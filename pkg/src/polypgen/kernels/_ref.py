"""Pure-numpy kernels, the fallback when the compiled extension is absent.

Accumulation order matches the compiled twin tap for tap (channel, then
kernel row, then kernel column; spatial scans are row-major), so the two
backends agree bitwise, not just to rounding.
"""

import numpy as np


def conv3x3_forward(x, w, b):
    """Same-padding 3x3 convolution.

    x: (C_in, H, W) float64, w: (C_out, C_in, 3, 3), b: (C_out,).
    Returns (C_out, H, W).
    """
    c_in, h, wd = x.shape
    c_out = w.shape[0]
    xp = np.zeros((c_in, h + 2, wd + 2))
    xp[:, 1:-1, 1:-1] = x
    y = np.empty((c_out, h, wd))
    y[:] = b[:, None, None]
    for ci in range(c_in):
        for ky in range(3):
            for kx in range(3):
                y += w[:, ci, ky, kx, None, None] * xp[ci, ky:ky + h, kx:kx + wd]
    return y


def conv3x3_backward(x, w, gy):
    """Gradients of conv3x3_forward w.r.t. input, weights and bias."""
    c_in, h, wd = x.shape
    c_out = w.shape[0]
    xp = np.zeros((c_in, h + 2, wd + 2))
    xp[:, 1:-1, 1:-1] = x

    gb = np.zeros(c_out)
    gw = np.zeros_like(w)
    for yy in range(h):
        for xx in range(wd):
            gb += gy[:, yy, xx]
            gw += gy[:, yy, xx, None, None, None] * xp[None, :, yy:yy + 3, xx:xx + 3]

    gxp = np.zeros_like(xp)
    for co in range(c_out):
        for ky in range(3):
            for kx in range(3):
                gxp[:, ky:ky + h, kx:kx + wd] += w[co, :, ky, kx, None, None] * gy[co]
    return gxp[:, 1:-1, 1:-1], gw, gb


def pairwise_sqdist(a, b):
    """Squared L2 distances between row vectors: (n, c) x (m, c) -> (n, m)."""
    n = a.shape[0]
    m = b.shape[0]
    out = np.zeros((n, m))
    for c in range(a.shape[1]):
        d = a[:, c, None] - b[None, :, c]
        out += d * d
    return out
