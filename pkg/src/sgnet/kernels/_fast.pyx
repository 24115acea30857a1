# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled patch-extraction and pooling kernels.

Same contracts (and bit-identical results) as sgnet.kernels.pure; col2im
accumulates in (ky, kx) pass order to match the fallback's floating-point
addition order exactly.
"""

import numpy as np

cimport cython


ctypedef fused real:
    float
    double


def conv_out_size(Py_ssize_t size, Py_ssize_t k, Py_ssize_t s, Py_ssize_t p):
    return (size + 2 * p - k) // s + 1


def im2col(real[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw,
           Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t ph, Py_ssize_t pw):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * ph - kh) // sh + 1
    cdef Py_ssize_t ow = (w + 2 * pw - kw) // sw + 1
    if real is double:
        out = np.empty((n * oh * ow, c * kh * kw), dtype=np.float64)
    else:
        out = np.empty((n * oh * ow, c * kh * kw), dtype=np.float32)
    cdef real[:, ::1] cols = out
    cdef Py_ssize_t bi, ci, i, j, ky, kx, hh, ww, row, col
    with nogil:
        for bi in range(n):
            for i in range(oh):
                for j in range(ow):
                    row = (bi * oh + i) * ow + j
                    for ci in range(c):
                        for ky in range(kh):
                            hh = i * sh + ky - ph
                            for kx in range(kw):
                                ww = j * sw + kx - pw
                                col = (ci * kh + ky) * kw + kx
                                if 0 <= hh < h and 0 <= ww < w:
                                    cols[row, col] = x[bi, ci, hh, ww]
                                else:
                                    cols[row, col] = 0
    return out


def col2im(real[:, ::1] cols, shape, Py_ssize_t kh, Py_ssize_t kw,
           Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t ph, Py_ssize_t pw):
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t oh = (h + 2 * ph - kh) // sh + 1
    cdef Py_ssize_t ow = (w + 2 * pw - kw) // sw + 1
    if real is double:
        out = np.zeros((n, c, h, w), dtype=np.float64)
    else:
        out = np.zeros((n, c, h, w), dtype=np.float32)
    cdef real[:, :, :, ::1] img = out
    cdef Py_ssize_t bi, ci, i, j, ky, kx, hh, ww
    with nogil:
        for ky in range(kh):
            for kx in range(kw):
                for bi in range(n):
                    for ci in range(c):
                        for i in range(oh):
                            hh = i * sh + ky - ph
                            if hh < 0 or hh >= h:
                                continue
                            for j in range(ow):
                                ww = j * sw + kx - pw
                                if 0 <= ww < w:
                                    img[bi, ci, hh, ww] += \
                                        cols[(bi * oh + i) * ow + j, (ci * kh + ky) * kw + kx]
    return out


def maxpool2x2_forward(real[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = h // 2, ow = w // 2
    if real is double:
        out = np.empty((n, c, oh, ow), dtype=np.float64)
    else:
        out = np.empty((n, c, oh, ow), dtype=np.float32)
    idx_np = np.empty((n, c, oh, ow), dtype=np.uint8)
    cdef real[:, :, :, ::1] y = out
    cdef unsigned char[:, :, :, ::1] idx = idx_np
    cdef Py_ssize_t bi, ci, i, j
    cdef real best, v
    cdef unsigned char b
    with nogil:
        for bi in range(n):
            for ci in range(c):
                for i in range(oh):
                    for j in range(ow):
                        best = x[bi, ci, 2 * i, 2 * j]
                        b = 0
                        v = x[bi, ci, 2 * i, 2 * j + 1]
                        if v > best:
                            best = v
                            b = 1
                        v = x[bi, ci, 2 * i + 1, 2 * j]
                        if v > best:
                            best = v
                            b = 2
                        v = x[bi, ci, 2 * i + 1, 2 * j + 1]
                        if v > best:
                            best = v
                            b = 3
                        y[bi, ci, i, j] = best
                        idx[bi, ci, i, j] = b
    return out, idx_np


def maxpool2x2_backward(real[:, :, :, ::1] grad, unsigned char[:, :, :, ::1] idx):
    cdef Py_ssize_t n = grad.shape[0], c = grad.shape[1]
    cdef Py_ssize_t oh = grad.shape[2], ow = grad.shape[3]
    if real is double:
        out = np.zeros((n, c, 2 * oh, 2 * ow), dtype=np.float64)
    else:
        out = np.zeros((n, c, 2 * oh, 2 * ow), dtype=np.float32)
    cdef real[:, :, :, ::1] dx = out
    cdef Py_ssize_t bi, ci, i, j
    cdef unsigned char b
    with nogil:
        for bi in range(n):
            for ci in range(c):
                for i in range(oh):
                    for j in range(ow):
                        b = idx[bi, ci, i, j]
                        dx[bi, ci, 2 * i + (b >> 1), 2 * j + (b & 1)] = grad[bi, ci, i, j]
    return out
