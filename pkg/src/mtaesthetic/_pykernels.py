"""Pure numpy versions of the compiled kernels in ``_ckernels.pyx``.

All image tensors are NHWC float64. Patch columns are ordered
(row offset, column offset, channel), matching a (k, k, C_in, C_out) filter
reshaped to (k*k*C_in, C_out).
"""
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _out_dim(size, k, stride):
    return (size - k) // stride + 1


def im2col(x, k, stride):
    n, h, w, c = x.shape
    oh, ow = _out_dim(h, k, stride), _out_dim(w, k, stride)
    win = sliding_window_view(x, (k, k), axis=(1, 2))  # n, h', w', c, k, k
    win = win[:, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * oh * ow, k * k * c)


def col2im(cols, n, h, w, c, k, stride):
    oh, ow = _out_dim(h, k, stride), _out_dim(w, k, stride)
    d = cols.reshape(n, oh, ow, k, k, c)
    dx = np.zeros((n, h, w, c))
    for a in range(k):
        for b in range(k):
            dx[:, a : a + stride * (oh - 1) + 1 : stride, b : b + stride * (ow - 1) + 1 : stride] += d[:, :, :, a, b]
    return dx


def maxpool_forward(x, k, stride):
    n, h, w, c = x.shape
    oh, ow = _out_dim(h, k, stride), _out_dim(w, k, stride)
    win = sliding_window_view(x, (k, k), axis=(1, 2))
    win = win[:, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    win = win.reshape(n, oh, ow, c, k * k)
    idx = win.argmax(axis=-1)  # first maximum in row-major window order
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx.astype(np.int64)


def maxpool_backward(dout, idx, h, w, k, stride):
    n, oh, ow, c = dout.shape
    dx = np.zeros((n, h, w, c))
    for a in range(k):
        for b in range(k):
            hit = np.where(idx == a * k + b, dout, 0.0)
            dx[:, a : a + stride * (oh - 1) + 1 : stride, b : b + stride * (ow - 1) + 1 : stride] += hit
    return dx


def jacobi_eigh(a, tol, max_sweeps):
    n = a.shape[0]
    v = np.eye(n)
    thresh = tol * math.sqrt(float(np.sum(a * a)))
    for sweep in range(max_sweeps + 1):
        off = math.sqrt(float(np.sum((a - np.diag(np.diag(a))) ** 2)))
        if off <= thresh:
            return np.diag(a).copy(), v, sweep
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0:
                    t = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
                cs = 1.0 / math.sqrt(1.0 + t * t)
                sn = t * cs
                x, y = a[:, p].copy(), a[:, q].copy()
                a[:, p] = cs * x - sn * y
                a[:, q] = sn * x + cs * y
                x, y = a[p, :].copy(), a[q, :].copy()
                a[p, :] = cs * x - sn * y
                a[q, :] = sn * x + cs * y
                x, y = v[:, p].copy(), v[:, q].copy()
                v[:, p] = cs * x - sn * y
                v[:, q] = sn * x + cs * y
                a[p, q] = a[q, p] = 0.0
    return np.diag(a).copy(), v, -1
