# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pixel kernels; same contract and arithmetic order as _pykernels."""
import numpy as np
from libc.math cimport floor


cdef inline Py_ssize_t _clamp(Py_ssize_t i, Py_ssize_t n) nogil:
    if i < 0:
        return 0
    if i >= n:
        return n - 1
    return i


def separable_blur(img, kernel):
    cdef double[:, :, ::1] src3 = np.ascontiguousarray(img, dtype=np.float64)
    cdef double[::1] k = np.ascontiguousarray(kernel, dtype=np.float64)
    cdef Py_ssize_t h = src3.shape[0], w = src3.shape[1], nc = src3.shape[2]
    cdef Py_ssize_t nk = k.shape[0], r = nk // 2, row = w * nc
    cdef double[:, ::1] src = np.asarray(src3).reshape(h, row)
    out_arr = np.zeros((h, w, nc), dtype=np.float64)
    cdef double[:, ::1] tmp = np.zeros((h, row), dtype=np.float64)
    cdef double[:, ::1] out = out_arr.reshape(h, row)
    cdef double[::1] pad = np.empty((w + 2 * r) * nc, dtype=np.float64)
    cdef Py_ssize_t y, i, j, x, c
    cdef double kj
    cdef double *a
    cdef double *b
    with nogil:
        # vertical pass: whole rows at a time, taps accumulated in order
        for y in range(h):
            a = &tmp[y, 0]
            for j in range(nk):
                kj = k[j]
                b = &src[_clamp(y + j - r, h), 0]
                for i in range(row):
                    a[i] = a[i] + kj * b[i]
        # horizontal pass over an edge-padded copy of each row
        for y in range(h):
            for x in range(-r, w + r):
                for c in range(nc):
                    pad[(x + r) * nc + c] = tmp[y, _clamp(x, w) * nc + c]
            a = &out[y, 0]
            for j in range(nk):
                kj = k[j]
                b = &pad[j * nc]
                for i in range(row):
                    a[i] = a[i] + kj * b[i]
    return out_arr


cdef inline double _fetch(double[:, :, ::1] img, Py_ssize_t y, Py_ssize_t x, Py_ssize_t c,
                          Py_ssize_t h, Py_ssize_t w) nogil:
    if y < 0 or y >= h or x < 0 or x >= w:
        return 0.0
    return img[y, x, c]


def bilinear_sample(img, ys, xs, bint zero_fill):
    cdef double[:, :, ::1] src = np.ascontiguousarray(img, dtype=np.float64)
    cdef double[:, ::1] yy = np.ascontiguousarray(ys, dtype=np.float64)
    cdef double[:, ::1] xx = np.ascontiguousarray(xs, dtype=np.float64)
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1], nc = src.shape[2]
    cdef Py_ssize_t oh = yy.shape[0], ow = yy.shape[1]
    out_arr = np.empty((oh, ow, nc), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, c, y0, x0, y1, x1
    cdef double y, x, fy, fx, fy0, fx0
    with nogil:
        for i in range(oh):
            for j in range(ow):
                y = yy[i, j]
                x = xx[i, j]
                if not zero_fill:
                    if y < 0.0:
                        y = 0.0
                    elif y > h - 1.0:
                        y = h - 1.0
                    if x < 0.0:
                        x = 0.0
                    elif x > w - 1.0:
                        x = w - 1.0
                fy0 = floor(y)
                fx0 = floor(x)
                fy = y - fy0
                fx = x - fx0
                y0 = <Py_ssize_t>fy0
                x0 = <Py_ssize_t>fx0
                y1 = y0 + 1
                x1 = x0 + 1
                if not zero_fill:
                    if y1 > h - 1:
                        y1 = h - 1
                    if x1 > w - 1:
                        x1 = w - 1
                for c in range(nc):
                    out[i, j, c] = (1.0 - fy) * ((1.0 - fx) * _fetch(src, y0, x0, c, h, w)
                                                 + fx * _fetch(src, y0, x1, c, h, w)) \
                                   + fy * ((1.0 - fx) * _fetch(src, y1, x0, c, h, w)
                                           + fx * _fetch(src, y1, x1, c, h, w))
    return out_arr
