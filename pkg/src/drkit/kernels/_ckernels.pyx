# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of ``_pykernels``; accumulation order matches exactly."""
import numpy as np
from libc.math cimport floor


def im2col(const double[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t n_ = x.shape[0], c_ = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - kw) // stride + 1
    out_arr = np.zeros((n_ * ho * wo, c_ * kh * kw))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t n, c, i, j, oy, ox, row, col, iy, ix
    for n in range(n_):
        for oy in range(ho):
            for ox in range(wo):
                row = (n * ho + oy) * wo + ox
                col = 0
                for c in range(c_):
                    for i in range(kh):
                        iy = oy * stride + i - pad
                        for j in range(kw):
                            ix = ox * stride + j - pad
                            if 0 <= iy < h and 0 <= ix < w:
                                out[row, col] = x[n, c, iy, ix]
                            col += 1
    return out_arr


def col2im(const double[:, ::1] cols, tuple shape, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t n_ = shape[0], c_ = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - kw) // stride + 1
    out_arr = np.zeros((n_, c_, h, w))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, c, i, j, oy, ox, row, col, iy, ix
    # (i, j) outermost so each cell sums its taps in the same order as the numpy path
    for n in range(n_):
        for c in range(c_):
            for i in range(kh):
                for j in range(kw):
                    col = (c * kh + i) * kw + j
                    for oy in range(ho):
                        iy = oy * stride + i - pad
                        if iy < 0 or iy >= h:
                            continue
                        for ox in range(wo):
                            ix = ox * stride + j - pad
                            if ix < 0 or ix >= w:
                                continue
                            row = (n * ho + oy) * wo + ox
                            out[n, c, iy, ix] += cols[row, col]
    return out_arr


def maxpool2d_forward(const double[:, :, :, ::1] x, int size):
    cdef Py_ssize_t n_ = x.shape[0], c_ = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = h // size, wo = w // size
    out_arr = np.empty((n_, c_, ho, wo))
    idx_arr = np.empty((n_, c_, ho, wo), dtype=np.int64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef long long[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t n, c, oy, ox, i, j, best
    cdef double m, v
    for n in range(n_):
        for c in range(c_):
            for oy in range(ho):
                for ox in range(wo):
                    best = (oy * size) * w + ox * size
                    m = x[n, c, oy * size, ox * size]
                    for i in range(size):
                        for j in range(size):
                            v = x[n, c, oy * size + i, ox * size + j]
                            if v > m:
                                m = v
                                best = (oy * size + i) * w + ox * size + j
                    out[n, c, oy, ox] = m
                    idx[n, c, oy, ox] = best
    return out_arr, idx_arr


def maxpool2d_backward(const double[:, :, :, ::1] grad_out, const long long[:, :, :, ::1] argmax, tuple shape):
    cdef Py_ssize_t n_ = shape[0], c_ = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t ho = grad_out.shape[2], wo = grad_out.shape[3]
    grad_arr = np.zeros((n_, c_, h, w))
    cdef double[:, :, :, ::1] grad = grad_arr
    cdef Py_ssize_t n, c, oy, ox, k
    for n in range(n_):
        for c in range(c_):
            for oy in range(ho):
                for ox in range(wo):
                    k = argmax[n, c, oy, ox]
                    grad[n, c, k // w, k % w] = grad_out[n, c, oy, ox]
    return grad_arr


cdef inline double _tap(const double[:, :, ::1] img, Py_ssize_t c, Py_ssize_t y, Py_ssize_t x,
                        Py_ssize_t h, Py_ssize_t w, double fill) nogil:
    if y < 0 or y >= h or x < 0 or x >= w:
        return fill
    return img[c, y, x]


def bilinear_sample(const double[:, :, ::1] img, ys_in, xs_in, double fill):
    """Sample ``img[C, H, W]`` at float coordinates; out-of-image taps read ``fill``."""
    ys_arr = np.ascontiguousarray(ys_in, dtype=np.float64)
    xs_arr = np.ascontiguousarray(xs_in, dtype=np.float64)
    out_shape = ys_arr.shape
    cdef const double[::1] ys = ys_arr.reshape(-1)
    cdef const double[::1] xs = xs_arr.reshape(-1)
    cdef Py_ssize_t c_ = img.shape[0], h = img.shape[1], w = img.shape[2]
    cdef Py_ssize_t m = ys.shape[0]
    out_arr = np.empty((c_, m))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t c, k, y0, x0
    cdef double fy, fx, wy, wx, top, bot
    for k in range(m):
        fy = floor(ys[k])
        fx = floor(xs[k])
        wy = ys[k] - fy
        wx = xs[k] - fx
        y0 = <Py_ssize_t>fy
        x0 = <Py_ssize_t>fx
        for c in range(c_):
            top = (1.0 - wx) * _tap(img, c, y0, x0, h, w, fill) + wx * _tap(img, c, y0, x0 + 1, h, w, fill)
            bot = (1.0 - wx) * _tap(img, c, y0 + 1, x0, h, w, fill) + wx * _tap(img, c, y0 + 1, x0 + 1, h, w, fill)
            out[c, k] = (1.0 - wy) * top + wy * bot
    return out_arr.reshape((c_,) + out_shape)
