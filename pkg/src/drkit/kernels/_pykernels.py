"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and the same floating-point accumulation order, so the two backends agree
bit-for-bit.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    ho, wo = _out_size(h, kh, stride, pad), _out_size(w, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :ho, :wo]
    # rows ordered (n, oy, ox); columns ordered (c, i, j)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)


def col2im(cols, shape, kh, kw, stride, pad):
    n, c, h, w = shape
    ho, wo = _out_size(h, kh, stride, pad), _out_size(w, kw, stride, pad)
    blocks = cols.reshape(n, ho, wo, c, kh, kw)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                blocks[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return np.ascontiguousarray(out[:, :, pad:pad + h, pad:pad + w])


def maxpool2d_forward(x, size):
    n, c, h, w = x.shape
    ho, wo = h // size, w // size
    win = x[:, :, :ho * size, :wo * size].reshape(n, c, ho, size, wo, size)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, size * size)
    local = win.argmax(axis=-1)
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    di, dj = np.divmod(local, size)
    rows = np.arange(ho)[:, None] * size + di
    cols = np.arange(wo)[None, :] * size + dj
    return np.ascontiguousarray(out), (rows * w + cols).astype(np.int64)


def maxpool2d_backward(grad_out, argmax, shape):
    n, c, h, w = shape
    grad = np.zeros((n * c, h * w))
    flat_idx = argmax.reshape(n * c, -1)
    flat_g = grad_out.reshape(n * c, -1)
    # windows are disjoint, so each input cell receives at most one value
    np.put_along_axis(grad, flat_idx, flat_g, axis=1)
    return grad.reshape(n, c, h, w)


def bilinear_sample(img, ys, xs, fill):
    """Sample ``img[C, H, W]`` at float coordinates; out-of-image taps read ``fill``."""
    c, h, w = img.shape
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    wy = ys - y0
    wx = xs - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)

    def tap(yy, xx):
        ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = img[:, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        return np.where(ok, vals, fill)

    a = tap(y0, x0)
    b = tap(y0, x0 + 1)
    cc = tap(y0 + 1, x0)
    d = tap(y0 + 1, x0 + 1)
    top = (1.0 - wx) * a + wx * b
    bot = (1.0 - wx) * cc + wx * d
    return (1.0 - wy) * top + wy * bot
