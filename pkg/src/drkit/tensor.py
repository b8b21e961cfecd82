"""Dense float64 tensors and the primitives the rest of the toolkit builds on.

Tensors are C-contiguous ``numpy.ndarray`` objects of dtype float64. The
helpers here enforce the toolkit's contracts on top of numpy: trailing-only
broadcasting, errors instead of Inf on division by zero, and finiteness
checks. None of them mutate their inputs.
"""
from __future__ import annotations

import io
import math
import struct

import numpy as np

from . import kernels
from .errors import NonFiniteError, ShapeError

_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "max": np.maximum,
}

TENSOR_MAGIC = b"DRKT"


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


def check_finite(t: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(t)):
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return t


def broadcast_shape(a: tuple, b: tuple) -> tuple:
    """Result shape under the trailing-dimension rule.

    Shapes must be equal, or the shorter one must equal the trailing
    dimensions of the longer one. Size-1 stretching is not supported.
    """
    a, b = tuple(a), tuple(b)
    if a == b:
        return a
    long_, short = (a, b) if len(a) >= len(b) else (b, a)
    if len(short) == 0 or long_[len(long_) - len(short):] == short:
        return long_
    raise ShapeError(f"shapes {a} and {b} are not trailing-broadcastable")


def elementwise(op: str, a, b) -> np.ndarray:
    try:
        fn = _OPS[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(_OPS)}") from None
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    if op == "div" and np.any(b == 0):
        raise ZeroDivisionError("elementwise division by zero")
    with np.errstate(over="ignore", invalid="ignore"):
        out = fn(a, b)
    return check_finite(out, f"elementwise {op}")


def matmul(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x, kernel, stride: int = 1, padding: int = 0, bias=None) -> np.ndarray:
    """Cross-correlation of ``x[N, C, H, W]`` with ``kernel[F, C, kh, kw]``; zero padding."""
    out, _ = conv2d_with_cols(x, kernel, stride, padding, bias)
    return out


def conv2d_with_cols(x, kernel, stride=1, padding=0, bias=None):
    """``conv2d`` that also returns the im2col matrix (reused by the backward pass)."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    f, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"kernel has {kc} input channels, input has {c}")
    if stride < 1 or padding < 0:
        raise ShapeError("stride must be >= 1 and padding >= 0")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    ho, wo = conv_output_size(h, kh, stride, padding), conv_output_size(w, kw, stride, padding)
    cols = kernels.im2col(x, kh, kw, stride, padding)
    out = cols @ kernel.reshape(f, -1).T
    if bias is not None:
        out += as_tensor(bias)
    return np.ascontiguousarray(out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)), cols


def gaussian_radius(theta: float) -> int:
    return max(1, math.ceil(3.0 * theta))


def gaussian_kernel1d(theta: float, radius: int | None = None) -> np.ndarray:
    if theta <= 0:
        raise ValueError("theta must be positive")
    r = gaussian_radius(theta) if radius is None else radius
    d = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(d * d) / (2.0 * theta * theta))
    return k / k.sum()


def gaussian_kernel2d(theta: float, radius: int | None = None) -> np.ndarray:
    """Normalized ``(2r+1) x (2r+1)`` Gaussian; ``radius`` defaults to ``ceil(3 theta)``."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    r = gaussian_radius(theta) if radius is None else radius
    if r < 1:
        raise ValueError("radius must be >= 1")
    d = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2.0 * theta * theta))
    return k / k.sum()


# Serialization: b"DRKT", u32 ndim, ndim x u64 dims, then float64 payload (all little-endian).

def write_tensor(fh, t) -> None:
    t = as_tensor(t)
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<I", t.ndim))
    fh.write(struct.pack(f"<{t.ndim}Q", *t.shape))
    fh.write(t.astype("<f8", copy=False).tobytes())


def read_tensor(fh) -> np.ndarray:
    magic = fh.read(4)
    if magic != TENSOR_MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}")
    (ndim,) = struct.unpack("<I", fh.read(4))
    shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
    count = math.prod(shape)
    payload = fh.read(8 * count)
    if len(payload) != 8 * count:
        raise ValueError("truncated tensor payload")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)


def tensor_to_bytes(t) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, t)
    return buf.getvalue()


def tensor_from_bytes(data: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(data))
