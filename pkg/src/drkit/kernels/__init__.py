"""Hot kernels behind a single import.

The compiled extension is used when it was built; otherwise, or when the
environment variable ``DRKIT_PURE_PYTHON=1`` is set, the numpy versions are
used. ``BACKEND`` names the active implementation.
"""
import os

from . import _pykernels

if os.environ.get("DRKIT_PURE_PYTHON") == "1":
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "numpy"

im2col = _impl.im2col
col2im = _impl.col2im
maxpool2d_forward = _impl.maxpool2d_forward
maxpool2d_backward = _impl.maxpool2d_backward
bilinear_sample = _impl.bilinear_sample

__all__ = [
    "BACKEND",
    "im2col",
    "col2im",
    "maxpool2d_forward",
    "maxpool2d_backward",
    "bilinear_sample",
]
