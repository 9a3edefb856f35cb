# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col/col2im and 2x2 max-pool kernels.

The convolution kernels work on channels-last (NHWC) data so every patch
entry is a contiguous run of channels. ``col2im`` visits output positions in
row-major order, which adds the contributions to each input pixel in
descending ``(i, j)`` kernel order; ``_kernels_py`` reproduces that order so
the two backends agree bit for bit.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(const float[:, :, :, ::1] x, int kh, int kw, int pad):
    """``x`` is NHWC; returns ``[N*Ho*Wo, kh*kw*C]`` with column ``(i*kw + j)*C + ch``."""
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t ho = h + 2 * pad - kh + 1, wo = w + 2 * pad - kw + 1
    out_arr = np.empty((n * ho * wo, kh * kw * c), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t b, y, xx, i, j, ch, row, col, sy, sx
    cdef float* dst
    cdef const float* src
    with nogil:
        for b in range(n):
            for y in range(ho):
                for xx in range(wo):
                    row = (b * ho + y) * wo + xx
                    for i in range(kh):
                        sy = y + i - pad
                        for j in range(kw):
                            sx = xx + j - pad
                            dst = &out[row, (i * kw + j) * c]
                            if 0 <= sy < h and 0 <= sx < w:
                                src = &x[b, sy, sx, 0]
                                for ch in range(c):
                                    dst[ch] = src[ch]
                            else:
                                for ch in range(c):
                                    dst[ch] = 0.0
    return out_arr


def col2im(const float[:, ::1] cols, int n, int h, int w, int c, int kh, int kw, int pad):
    """Adjoint of :func:`im2col`; returns NHWC ``[N, H, W, C]``."""
    cdef Py_ssize_t ho = h + 2 * pad - kh + 1, wo = w + 2 * pad - kw + 1
    out_arr = np.zeros((n, h, w, c), dtype=np.float32)
    cdef float[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, y, xx, i, j, ch, row, sy, sx
    cdef float* dst
    cdef const float* src
    with nogil:
        for b in range(n):
            for y in range(ho):
                for xx in range(wo):
                    row = (b * ho + y) * wo + xx
                    for i in range(kh):
                        sy = y + i - pad
                        if sy < 0 or sy >= h:
                            continue
                        for j in range(kw):
                            sx = xx + j - pad
                            if sx < 0 or sx >= w:
                                continue
                            src = &cols[row, (i * kw + j) * c]
                            dst = &out[b, sy, sx, 0]
                            for ch in range(c):
                                dst[ch] = dst[ch] + src[ch]
    return out_arr


def maxpool2x2_forward(const float[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t ho = x.shape[2] // 2, wo = x.shape[3] // 2
    out_arr = np.empty((n, c, ho, wo), dtype=np.float32)
    idx_arr = np.empty((n, c, ho, wo), dtype=np.uint8)
    cdef float[:, :, :, ::1] out = out_arr
    cdef cnp.uint8_t[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t b, ch, y, xx, k
    cdef float best, v
    cdef cnp.uint8_t arg
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(ho):
                    for xx in range(wo):
                        best = x[b, ch, 2 * y, 2 * xx]
                        arg = 0
                        for k in range(1, 4):
                            v = x[b, ch, 2 * y + k // 2, 2 * xx + k % 2]
                            if v > best:
                                best = v
                                arg = <cnp.uint8_t>k
                        out[b, ch, y, xx] = best
                        idx[b, ch, y, xx] = arg
    return out_arr, idx_arr


def maxpool2x2_backward(const float[:, :, :, ::1] grad, const cnp.uint8_t[:, :, :, ::1] idx):
    cdef Py_ssize_t n = grad.shape[0], c = grad.shape[1], ho = grad.shape[2], wo = grad.shape[3]
    dx_arr = np.zeros((n, c, 2 * ho, 2 * wo), dtype=np.float32)
    cdef float[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, ch, y, xx, k
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(ho):
                    for xx in range(wo):
                        k = idx[b, ch, y, xx]
                        dx[b, ch, 2 * y + k // 2, 2 * xx + k % 2] = grad[b, ch, y, xx]
    return dx_arr


def dense_forward(const float[:, ::1] x, const float[:, ::1] w, const float[::1] b):
    """``x @ w + b`` with a fixed per-row summation order (k ascending).

    Unlike BLAS, each output row depends only on its own input row, so eval
    forwards are bit-identical whatever the batch size.
    """
    cdef Py_ssize_t n = x.shape[0], k = x.shape[1], m = w.shape[1]
    out_arr = np.zeros((n, m), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t i, p, j
    cdef float xv
    with nogil:
        for i in range(n):
            for p in range(k):
                xv = x[i, p]
                for j in range(m):
                    out[i, j] = out[i, j] + xv * w[p, j]
            for j in range(m):
                out[i, j] = out[i, j] + b[j]
    return out_arr
