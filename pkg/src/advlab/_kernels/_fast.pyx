# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: direct-sum 2-D convolution and 2x2 max-pooling.

Contracts match advlab._kernels.pure; loop nests are chosen so the hot
inner loops run over contiguous memory.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                   double[::1] b, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t f = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = h + 2 * pad - kh + 1
    cdef Py_ssize_t wo = wd + 2 * pad - kw + 1
    out_arr = np.empty((n, f, ho, wo), dtype=np.float64)
    cdef double[:, :, :, ::1] y = out_arr
    cdef Py_ssize_t ni, fi, ci, i, j, u, v, si, sj
    cdef double acc
    for ni in range(n):
        for fi in range(f):
            for i in range(ho):
                for j in range(wo):
                    acc = b[fi]
                    for ci in range(c):
                        for u in range(kh):
                            si = i + u - pad
                            if si < 0 or si >= h:
                                continue
                            for v in range(kw):
                                sj = j + v - pad
                                if sj < 0 or sj >= wd:
                                    continue
                                acc += x[ni, ci, si, sj] * w[fi, ci, u, v]
                    y[ni, fi, i, j] = acc
    return out_arr


def conv2d_backward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                    double[:, :, :, ::1] dy, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t f = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = dy.shape[2], wo = dy.shape[3]
    dx_arr = np.zeros((n, c, h, wd), dtype=np.float64)
    dw_arr = np.zeros((f, c, kh, kw), dtype=np.float64)
    db_arr = np.zeros(f, dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef double[:, :, :, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef Py_ssize_t ni, fi, ci, i, j, u, v, si, sj
    cdef double g
    for ni in range(n):
        for fi in range(f):
            for i in range(ho):
                for j in range(wo):
                    g = dy[ni, fi, i, j]
                    if g == 0.0:
                        continue
                    db[fi] += g
                    for ci in range(c):
                        for u in range(kh):
                            si = i + u - pad
                            if si < 0 or si >= h:
                                continue
                            for v in range(kw):
                                sj = j + v - pad
                                if sj < 0 or sj >= wd:
                                    continue
                                dw[fi, ci, u, v] += x[ni, ci, si, sj] * g
                                dx[ni, ci, si, sj] += w[fi, ci, u, v] * g
    return dx_arr, dw_arr, db_arr


def maxpool2_forward(double[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t h2 = h // 2, w2 = w // 2
    y_arr = np.empty((n, c, h2, w2), dtype=np.float64)
    idx_arr = np.empty((n, c, h2, w2), dtype=np.int8)
    cdef double[:, :, :, ::1] y = y_arr
    cdef signed char[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t ni, ci, i, j, di, dj
    cdef double best, v
    cdef signed char bi
    for ni in range(n):
        for ci in range(c):
            for i in range(h2):
                for j in range(w2):
                    best = x[ni, ci, 2 * i, 2 * j]
                    bi = 0
                    for di in range(2):
                        for dj in range(2):
                            v = x[ni, ci, 2 * i + di, 2 * j + dj]
                            if v > best:
                                best = v
                                bi = <signed char> (2 * di + dj)
                    y[ni, ci, i, j] = best
                    idx[ni, ci, i, j] = bi
    return y_arr, idx_arr


def maxpool2_backward(double[:, :, :, ::1] dy, signed char[:, :, :, ::1] idx):
    cdef Py_ssize_t n = dy.shape[0], c = dy.shape[1], h2 = dy.shape[2], w2 = dy.shape[3]
    dx_arr = np.zeros((n, c, h2 * 2, w2 * 2), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t ni, ci, i, j
    cdef signed char b
    for ni in range(n):
        for ci in range(c):
            for i in range(h2):
                for j in range(w2):
                    b = idx[ni, ci, i, j]
                    dx[ni, ci, 2 * i + (b >> 1), 2 * j + (b & 1)] = dy[ni, ci, i, j]
    return dx_arr
