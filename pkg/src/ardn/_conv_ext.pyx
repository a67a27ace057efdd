# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled 3x3 / pad-1 / stride-1 convolution kernels.

im2col and col2im run in tight C loops; the contractions go to BLAS through
scipy's Cython bindings.  Batch items are processed sequentially and the
weight gradient is accumulated in batch order, so results do not depend on
scheduling.
"""

import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm, sgemm

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline void _gemm(char ta, char tb, int m, int n, int k, real alpha,
                       real* a, int lda, real* b, int ldb, real beta,
                       real* c, int ldc) noexcept nogil:
    if real is double:
        dgemm(&ta, &tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)
    else:
        sgemm(&ta, &tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


cdef void _im2col(const real[:, :, ::1] x, real[:, ::1] col) noexcept nogil:
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t ci, dy, dx, y, xx, row, sy, x0, x1
    for ci in range(C):
        for dy in range(3):
            for dx in range(3):
                row = ci * 9 + dy * 3 + dx
                # valid x range for this tap: 0 <= xx + dx - 1 < W
                x0 = 1 - dx if dx == 0 else 0
                x1 = W - 1 if dx == 2 else W
                for y in range(H):
                    sy = y + dy - 1
                    if sy < 0 or sy >= H:
                        for xx in range(W):
                            col[row, y * W + xx] = 0
                        continue
                    if x0 > 0:
                        col[row, y * W] = 0
                    if x1 < W:
                        col[row, y * W + W - 1] = 0
                    for xx in range(x0, x1):
                        col[row, y * W + xx] = x[ci, sy, xx + dx - 1]


cdef void _col2im(const real[:, ::1] col, real[:, :, ::1] gx) noexcept nogil:
    cdef Py_ssize_t C = gx.shape[0], H = gx.shape[1], W = gx.shape[2]
    cdef Py_ssize_t ci, dy, dx, y, xx, row, sy, x0, x1
    for ci in range(C):
        for y in range(H):
            for xx in range(W):
                gx[ci, y, xx] = 0
        for dy in range(3):
            for dx in range(3):
                row = ci * 9 + dy * 3 + dx
                x0 = 1 - dx if dx == 0 else 0
                x1 = W - 1 if dx == 2 else W
                for y in range(H):
                    sy = y + dy - 1
                    if sy < 0 or sy >= H:
                        continue
                    for xx in range(x0, x1):
                        gx[ci, sy, xx + dx - 1] += col[row, y * W + xx]


def _forward(const real[:, :, :, ::1] x, const real[:, ::1] w2,
             const real[::1] bias, real[:, :, :, ::1] out, real[:, ::1] col):
    cdef Py_ssize_t N = x.shape[0], H = x.shape[2], W = x.shape[3]
    cdef int O = w2.shape[0], K = w2.shape[1], HW = <int>(H * W)
    cdef Py_ssize_t b, o, y, xx
    with nogil:
        for b in range(N):
            _im2col(x[b], col)
            for o in range(O):
                for y in range(H):
                    for xx in range(W):
                        out[b, o, y, xx] = bias[o]
            _gemm(c'N', c'N', HW, O, K, <real>1.0, &col[0, 0], HW,
                  <real*>&w2[0, 0], K, <real>1.0, &out[b, 0, 0, 0], HW)


def _backward(const real[:, :, :, ::1] go, const real[:, :, :, ::1] x,
              const real[:, ::1] w2, real[:, :, :, ::1] gx, real[:, ::1] gw,
              real[::1] gb, real[:, ::1] col, bint need_input):
    cdef Py_ssize_t N = x.shape[0], H = x.shape[2], W = x.shape[3]
    cdef int O = w2.shape[0], K = w2.shape[1], HW = <int>(H * W)
    cdef Py_ssize_t b, o, y, xx
    cdef double acc
    with nogil:
        for o in range(O):
            acc = 0.0
            for b in range(N):
                for y in range(H):
                    for xx in range(W):
                        acc = acc + go[b, o, y, xx]
            gb[o] = <real>acc
        for b in range(N):
            _im2col(x[b], col)
            _gemm(c'T', c'N', K, O, HW, <real>1.0, &col[0, 0], HW,
                  <real*>&go[b, 0, 0, 0], HW, <real>(0.0 if b == 0 else 1.0),
                  &gw[0, 0], K)
            if need_input:
                _gemm(c'N', c'T', HW, K, O, <real>1.0, <real*>&go[b, 0, 0, 0], HW,
                      <real*>&w2[0, 0], K, <real>0.0, &col[0, 0], HW)
                _col2im(col, gx[b])


def conv3x3_forward(x, w, bias):
    n, c, h, wd = x.shape
    o = w.shape[0]
    out = np.empty((n, o, h, wd), dtype=x.dtype)
    col = np.empty((c * 9, h * wd), dtype=x.dtype)
    _forward(x, w.reshape(o, c * 9), bias, out, col)
    return out


def conv3x3_backward(grad_out, x, w, need_input=True):
    n, c, h, wd = x.shape
    o = w.shape[0]
    gx = np.empty_like(x) if need_input else np.empty((1, 1, 1, 1), dtype=x.dtype)
    gw = np.zeros((o, c * 9), dtype=x.dtype)
    gb = np.empty(o, dtype=x.dtype)
    col = np.empty((c * 9, h * wd), dtype=x.dtype)
    _backward(grad_out, x, w.reshape(o, c * 9), gx, gw, gb, col, need_input)
    return (gx if need_input else None), gw.reshape(w.shape), gb
