"""Fundus preprocessing: FOV crop, resize, rescale, z-score, Graham and CLAHE.

Images are ``[3, H, W]`` float64 arrays in RGB order. Raw images, Graham and
CLAHE work in the 8-bit domain ``[0, 255]``; ``rescale`` maps to ``[0, 1]``.
The default chain is crop -> (enhance) -> resize -> rescale, and z-scoring
is applied at batch time with statistics from the training split.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .errors import ConfigError, DataError
from .tensor import as_tensor, gaussian_kernel1d, gaussian_radius

FOV_THRESHOLD = 10.0 / 255.0
ENHANCEMENTS = ("none", "graham", "clahe")


@dataclass(frozen=True)
class GrahamParams:
    theta: float = 10.0
    alpha: float = 4.0
    beta: float = -4.0
    gamma_offset: float = 128.0

    def __post_init__(self):
        if self.theta <= 0:
            raise ConfigError("Graham theta must be positive")


@dataclass(frozen=True)
class ClaheParams:
    clip_limit: float = 3.0
    tile_grid: int = 8

    def __post_init__(self):
        if self.clip_limit < 1:
            raise ConfigError("CLAHE clip_limit must be >= 1")
        if self.tile_grid < 1:
            raise ConfigError("CLAHE tile_grid must be >= 1")


@dataclass(frozen=True)
class NormStats:
    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ConfigError("NormStats needs three channel means and stds")
        if any(not s > 0 for s in self.std):
            raise ConfigError("NormStats std must be positive per channel")


@dataclass(frozen=True)
class PreprocessOptions:
    resolution: int = 64
    enhance: str = "none"
    graham: GrahamParams = field(default_factory=GrahamParams)
    clahe: ClaheParams = field(default_factory=ClaheParams)
    fov_threshold: float = FOV_THRESHOLD

    def __post_init__(self):
        if self.enhance not in ENHANCEMENTS:
            raise ConfigError(f"unknown enhancement {self.enhance!r}; expected one of {ENHANCEMENTS}")
        if self.resolution < 8:
            raise ConfigError("resolution must be >= 8")


def hwc_to_chw(arr) -> np.ndarray:
    a = np.asarray(arr)
    if a.ndim == 2:
        a = np.stack([a, a, a], axis=-1)
    if a.ndim != 3 or a.shape[2] not in (3, 4):
        raise DataError(f"expected an RGB image, got array of shape {a.shape}")
    return np.ascontiguousarray(a[:, :, :3].transpose(2, 0, 1), dtype=np.float64)


def chw_to_hwc_uint8(img) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img).transpose(1, 2, 0)), 0, 255).astype(np.uint8)


def fov_bbox(img, threshold: float = FOV_THRESHOLD, value_range: float = 1.0):
    """``(top, bottom, left, right)`` (exclusive ends) of pixels whose max channel exceeds the threshold."""
    img = as_tensor(img)
    mask = img.max(axis=0) > threshold * value_range
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise DataError("no field of view: image has no pixel above the foreground threshold")
    return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1


def crop_fov(img, threshold: float = FOV_THRESHOLD, value_range: float = 1.0) -> np.ndarray:
    """Crop to the smallest rectangle containing the field of view.

    ``value_range`` is 1 for ``[0, 1]`` images and 255 for 8-bit ones.
    """
    top, bottom, left, right = fov_bbox(img, threshold, value_range)
    return np.ascontiguousarray(as_tensor(img)[:, top:bottom, left:right])


def _align_corners_grid(n_in: int, n_out: int) -> np.ndarray:
    if n_out == 1:
        return np.zeros(1)
    return np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)


def resize(img, side: int, width: int | None = None) -> np.ndarray:
    """Bilinear resize to ``side x side`` (or ``side x width``); corners are aligned.

    Output pixel ``k`` samples input coordinate ``k * (n_in - 1) / (n_out - 1)``,
    so the four corner pixels keep their values exactly.
    """
    img = as_tensor(img)
    out_h, out_w = side, side if width is None else width
    if out_h < 1 or out_w < 1:
        raise ValueError("resize target must be positive")
    _, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = _align_corners_grid(h, out_h)
    xs = _align_corners_grid(w, out_w)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return kernels.bilinear_sample(img, gy, gx, 0.0)


def rescale(img) -> np.ndarray:
    return as_tensor(img) / 255.0


def compute_norm_stats(images) -> NormStats:
    """Per-channel mean and (population) std over every pixel of ``images``."""
    images = list(images)
    total = np.zeros(3)
    count = 0
    for img in images:
        total += img.reshape(3, -1).sum(axis=1)
        count += img.shape[1] * img.shape[2]
    if count == 0:
        raise DataError("cannot compute normalization statistics of an empty set")
    mean = total / count
    sq = np.zeros(3)
    for img in images:
        sq += ((img.reshape(3, -1) - mean[:, None]) ** 2).sum(axis=1)
    std = np.sqrt(sq / count)
    return NormStats(tuple(float(m) for m in mean), tuple(float(s) for s in std))


def zscore(img, stats: NormStats) -> np.ndarray:
    mean = np.asarray(stats.mean)[:, None, None]
    std = np.asarray(stats.std)
    if np.any(std == 0):
        raise ZeroDivisionError("zero channel std")
    return (as_tensor(img) - mean) / std[:, None, None]


def gaussian_blur(img, theta: float, radius: int | None = None) -> np.ndarray:
    """Per-channel normalized Gaussian blur with reflect padding (separable)."""
    img = as_tensor(img)
    r = gaussian_radius(theta) if radius is None else radius
    k = gaussian_kernel1d(theta, r)
    padded = np.pad(img, ((0, 0), (r, r), (r, r)), mode="reflect")
    rows = sliding_window_view(padded, 2 * r + 1, axis=1) @ k
    return sliding_window_view(rows, 2 * r + 1, axis=2) @ k


def graham(img, p: GrahamParams = GrahamParams()) -> np.ndarray:
    """``alpha * I + beta * blur(I) + gamma`` on an 8-bit-domain image, clamped to [0, 255]."""
    img = as_tensor(img)
    blurred = gaussian_blur(img, p.theta)
    return np.clip(p.alpha * img + p.beta * blurred + p.gamma_offset, 0.0, 255.0)


def clip_histogram(hist, ceiling: float):
    """Clip a histogram at ``ceiling``; returns ``(clipped, excess)`` before redistribution."""
    hist = np.asarray(hist, dtype=np.float64)
    clipped = np.minimum(hist, ceiling)
    return clipped, float((hist - clipped).sum())


def _tile_lut(values, clip_limit: float) -> np.ndarray:
    hist = np.bincount(values.ravel(), minlength=256).astype(np.float64)
    if np.count_nonzero(hist) <= 1:
        # a flat tile has no contrast to redistribute; leave it unchanged
        return np.arange(256, dtype=np.float64)
    ceiling = clip_limit * values.size / 256.0
    clipped, excess = clip_histogram(hist, ceiling)
    clipped += excess / 256.0
    cdf = np.cumsum(clipped)
    return 255.0 * cdf / cdf[-1]


def _interp_axis(n: int, edges: np.ndarray):
    """Lower tile index, upper tile index and weight per pixel along one axis."""
    centers = (edges[:-1] + edges[1:] - 1) / 2.0
    pos = np.arange(n, dtype=np.float64)
    lo = np.clip(np.searchsorted(centers, pos, side="right") - 1, 0, len(centers) - 1)
    hi = np.minimum(lo + 1, len(centers) - 1)
    span = centers[hi] - centers[lo]
    wt = np.where(span > 0, (pos - centers[lo]) / np.where(span > 0, span, 1.0), 0.0)
    return lo, hi, np.clip(wt, 0.0, 1.0)


def clahe_channel(channel, p: ClaheParams = ClaheParams()) -> np.ndarray:
    v = np.clip(np.rint(channel), 0, 255).astype(np.int64)
    h, w = v.shape
    gy, gx = min(p.tile_grid, h), min(p.tile_grid, w)
    ey = np.rint(np.linspace(0, h, gy + 1)).astype(np.int64)
    ex = np.rint(np.linspace(0, w, gx + 1)).astype(np.int64)
    luts = np.empty((gy, gx, 256))
    for i in range(gy):
        for j in range(gx):
            luts[i, j] = _tile_lut(v[ey[i]:ey[i + 1], ex[j]:ex[j + 1]], p.clip_limit)
    y0, y1, wy = _interp_axis(h, ey)
    x0, x1, wx = _interp_axis(w, ex)
    wy = wy[:, None]
    wx = wx[None, :]
    a = luts[y0[:, None], x0[None, :], v]
    b = luts[y0[:, None], x1[None, :], v]
    c = luts[y1[:, None], x0[None, :], v]
    d = luts[y1[:, None], x1[None, :], v]
    out = (1 - wy) * ((1 - wx) * a + wx * b) + wy * ((1 - wx) * c + wx * d)
    return np.clip(out, 0.0, 255.0)


def clahe(img, p: ClaheParams = ClaheParams()) -> np.ndarray:
    """CLAHE applied to each RGB channel independently (8-bit domain).

    Tiles get a 256-bin histogram clipped at ``clip_limit`` times the mean bin
    height; the excess is spread evenly over all bins and the tile maps
    ``v -> 255 * cdf(v) / cdf(255)``. Mappings are blended bilinearly between
    tile centers. Tiles holding a single intensity map it to itself.
    """
    img = as_tensor(img)
    return np.stack([clahe_channel(ch, p) for ch in img])


def enhance(img, options: PreprocessOptions) -> np.ndarray:
    if options.enhance == "graham":
        return graham(img, options.graham)
    if options.enhance == "clahe":
        return clahe(img, options.clahe)
    return img


def preprocess_raw(raw, options: PreprocessOptions) -> np.ndarray:
    """8-bit ``[3, H, W]`` image -> cropped, enhanced, resized, rescaled ``[0, 1]`` image."""
    img = as_tensor(raw)
    img = crop_fov(img, options.fov_threshold, 255.0)
    img = enhance(img, options)
    img = resize(img, options.resolution)
    return np.clip(rescale(img), 0.0, 1.0)


__all__ = [
    "GrahamParams",
    "ClaheParams",
    "NormStats",
    "PreprocessOptions",
    "crop_fov",
    "resize",
    "rescale",
    "compute_norm_stats",
    "zscore",
    "graham",
    "clahe",
    "preprocess_raw",
]
