# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: patch extraction, its adjoint, max pooling and
cyclic Jacobi sweeps. Semantics match ``_pykernels`` exactly (including
argmax tie-breaking); summation order in ``col2im`` may differ in the last
ulp.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


def im2col(const double[:, :, :, ::1] x, int k, int stride):
    cdef Py_ssize_t n_img = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t oh = (h - k) // stride + 1
    cdef Py_ssize_t ow = (w - k) // stride + 1
    out_arr = np.empty((n_img * oh * ow, k * k * c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t n, i, j, a, b, ch, row, col, y0, x0
    for n in range(n_img):
        for i in range(oh):
            y0 = i * stride
            for j in range(ow):
                x0 = j * stride
                row = (n * oh + i) * ow + j
                col = 0
                for a in range(k):
                    for b in range(k):
                        for ch in range(c):
                            out[row, col] = x[n, y0 + a, x0 + b, ch]
                            col += 1
    return out_arr


def col2im(const double[:, ::1] cols, Py_ssize_t n_img, Py_ssize_t h, Py_ssize_t w,
           Py_ssize_t c, int k, int stride):
    cdef Py_ssize_t oh = (h - k) // stride + 1
    cdef Py_ssize_t ow = (w - k) // stride + 1
    dx_arr = np.zeros((n_img, h, w, c), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t n, i, j, a, b, ch, row, col, y0, x0
    for n in range(n_img):
        for i in range(oh):
            y0 = i * stride
            for j in range(ow):
                x0 = j * stride
                row = (n * oh + i) * ow + j
                col = 0
                for a in range(k):
                    for b in range(k):
                        for ch in range(c):
                            dx[n, y0 + a, x0 + b, ch] += cols[row, col]
                            col += 1
    return dx_arr


def maxpool_forward(const double[:, :, :, ::1] x, int k, int stride):
    cdef Py_ssize_t n_img = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t oh = (h - k) // stride + 1
    cdef Py_ssize_t ow = (w - k) // stride + 1
    out_arr = np.empty((n_img, oh, ow, c), dtype=np.float64)
    idx_arr = np.empty((n_img, oh, ow, c), dtype=np.int64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef long long[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t n, i, j, a, b, ch, best_i
    cdef double best, v
    for n in range(n_img):
        for i in range(oh):
            for j in range(ow):
                for ch in range(c):
                    best = x[n, i * stride, j * stride, ch]
                    best_i = 0
                    for a in range(k):
                        for b in range(k):
                            v = x[n, i * stride + a, j * stride + b, ch]
                            if v > best:
                                best = v
                                best_i = a * k + b
                    out[n, i, j, ch] = best
                    idx[n, i, j, ch] = best_i
    return out_arr, idx_arr


def maxpool_backward(const double[:, :, :, ::1] dout, const long long[:, :, :, ::1] idx,
                     Py_ssize_t h, Py_ssize_t w, int k, int stride):
    cdef Py_ssize_t n_img = dout.shape[0], oh = dout.shape[1], ow = dout.shape[2]
    cdef Py_ssize_t c = dout.shape[3]
    dx_arr = np.zeros((n_img, h, w, c), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t n, i, j, ch, p
    for n in range(n_img):
        for i in range(oh):
            for j in range(ow):
                for ch in range(c):
                    p = idx[n, i, j, ch]
                    dx[n, i * stride + p // k, j * stride + p % k, ch] += dout[n, i, j, ch]
    return dx_arr


cdef double _off_norm(double[:, ::1] a, Py_ssize_t n):
    cdef double s = 0.0
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(n):
            if i != j:
                s += a[i, j] * a[i, j]
    return sqrt(s)


def jacobi_eigh(double[:, ::1] a, double tol, int max_sweeps):
    """In-place cyclic Jacobi on ``a``; returns (diag, vectors, sweeps).

    ``sweeps`` is -1 when the off-diagonal mass did not fall below
    ``tol * ||a||_F`` within ``max_sweeps``.
    """
    cdef Py_ssize_t n = a.shape[0]
    v_arr = np.eye(n, dtype=np.float64)
    cdef double[:, ::1] v = v_arr
    cdef double frob = 0.0
    cdef Py_ssize_t i, j, p, q, r
    cdef int sweep
    cdef double apq, tau, t, cs, sn, x, y
    for i in range(n):
        for j in range(n):
            frob += a[i, j] * a[i, j]
    frob = sqrt(frob)
    cdef double thresh = tol * frob
    cdef int done = -1
    for sweep in range(max_sweeps + 1):
        if _off_norm(a, n) <= thresh:
            done = sweep
            break
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0:
                    t = 1.0 / (tau + sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + sqrt(1.0 + tau * tau))
                cs = 1.0 / sqrt(1.0 + t * t)
                sn = t * cs
                for r in range(n):
                    x = a[r, p]
                    y = a[r, q]
                    a[r, p] = cs * x - sn * y
                    a[r, q] = sn * x + cs * y
                for r in range(n):
                    x = a[p, r]
                    y = a[q, r]
                    a[p, r] = cs * x - sn * y
                    a[q, r] = sn * x + cs * y
                for r in range(n):
                    x = v[r, p]
                    y = v[r, q]
                    v[r, p] = cs * x - sn * y
                    v[r, q] = sn * x + cs * y
                a[p, q] = 0.0
                a[q, p] = 0.0
    diag = np.array([a[i, i] for i in range(n)], dtype=np.float64)
    return diag, v_arr, done
