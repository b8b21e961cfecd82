"""Training-time augmentation: flips, rotation, random crop, color jitter, PCA lighting.

All transforms work on ``[3, H, W]`` images in ``[0, 1]`` and return an
image of the same shape. ``apply`` draws parameters from an ``Rng`` in a
fixed order (flips, rotation, crop, color) so a given stream always
produces the same result.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, DataError
from .rng import Rng
from .tensor import as_tensor

log = logging.getLogger(__name__)

CROP_SCALE = (1.0 / 1.15, 1.15)
CROP_ASPECT = (0.7, 1.3)
JITTER_BCS = 0.2
JITTER_HUE = 0.1
PCA_ALPHA_STD = 0.1
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class AugmentationSpec:
    hflip: bool = False
    vflip: bool = False
    rotation: bool = False
    cropping: bool = False
    color_jitter: bool = False
    krizhevsky: bool = False

    @property
    def is_identity(self) -> bool:
        return not any((self.hflip, self.vflip, self.rotation, self.cropping, self.color_jitter, self.krizhevsky))

    def check(self) -> "AugmentationSpec":
        if self.krizhevsky and self.color_jitter:
            log.warning("color jitter and Krizhevsky color augmentation are both enabled")
        return self


def _preset(flip=False, rotation=False, cropping=False, jitter=False, kriz=False):
    return AugmentationSpec(flip, flip, rotation, cropping, jitter, kriz)


# Rows of the augmentation-composition ablation, in order.
AUGMENTATION_PRESETS = {
    "none": _preset(),
    "flip": _preset(flip=True),
    "flip_rotation": _preset(flip=True, rotation=True),
    "flip_crop": _preset(flip=True, cropping=True),
    "flip_jitter": _preset(flip=True, jitter=True),
    "flip_krizhevsky": _preset(flip=True, kriz=True),
    "flip_rotation_crop": _preset(flip=True, rotation=True, cropping=True),
    "flip_rotation_crop_jitter": _preset(flip=True, rotation=True, cropping=True, jitter=True),
    "flip_rotation_crop_krizhevsky": _preset(flip=True, rotation=True, cropping=True, kriz=True),
    "all": _preset(flip=True, rotation=True, cropping=True, jitter=True, kriz=True),
}
BASELINE_AUGMENTATION = AUGMENTATION_PRESETS["flip_rotation"]


@dataclass(frozen=True)
class PcaColorBasis:
    eigenvalues: np.ndarray  # [3], descending
    eigenvectors: np.ndarray  # [3, 3], column k pairs with eigenvalues[k]

    def to_dict(self):
        return {"eigenvalues": self.eigenvalues.tolist(), "eigenvectors": self.eigenvectors.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["eigenvalues"], dtype=np.float64), np.asarray(d["eigenvectors"], dtype=np.float64))


def hflip(img) -> np.ndarray:
    return np.ascontiguousarray(as_tensor(img)[:, :, ::-1])


def vflip(img) -> np.ndarray:
    return np.ascontiguousarray(as_tensor(img)[:, ::-1, :])


def rotate(img, angle_deg: float, fill: float = 0.0) -> np.ndarray:
    """Rotate about the image center with bilinear sampling; uncovered pixels get ``fill``."""
    img = as_tensor(img)
    _, h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    t = math.radians(angle_deg)
    cos_t, sin_t = math.cos(t), math.sin(t)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64) - cy, np.arange(w, dtype=np.float64) - cx, indexing="ij")
    # inverse map: output pixel -> source coordinate
    src_y = cos_t * yy - sin_t * xx + cy
    src_x = sin_t * yy + cos_t * xx + cx
    return kernels.bilinear_sample(img, src_y, src_x, fill)


def crop_resize(img, scale: float, aspect: float, offset_y: float = 0.5, offset_x: float = 0.5, fill: float = 0.0):
    """Crop a region of side lengths ``scale`` times the original, reshaped by ``aspect``, and resize back.

    The region is ``H * scale / sqrt(aspect)`` tall and ``W * scale * sqrt(aspect)``
    wide; ``offset_y``/``offset_x`` in [0, 1] place it along the free range.
    Regions reaching past the border read ``fill``.
    """
    img = as_tensor(img)
    _, h, w = img.shape
    ch = h * scale / math.sqrt(aspect)
    cw = w * scale * math.sqrt(aspect)
    y0 = offset_y * (h - ch)
    x0 = offset_x * (w - cw)
    ys = y0 + np.arange(h, dtype=np.float64) * (ch - 1) / max(h - 1, 1)
    xs = x0 + np.arange(w, dtype=np.float64) * (cw - 1) / max(w - 1, 1)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return kernels.bilinear_sample(img, gy, gx, fill)


def rgb_to_hsv(img):
    r, g, b = img
    mx = img.max(axis=0)
    mn = img.min(axis=0)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    hue = np.where(mx == r, ((g - b) / safe) % 6.0, np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0))
    hue = np.where(delta > 0, hue / 6.0, 0.0)
    sat = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([hue, sat, mx])


def hsv_to_rgb(hsv):
    h, s, v = hsv
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


def color_jitter(img, brightness: float = 0.0, contrast: float = 0.0, saturation: float = 0.0, hue: float = 0.0):
    """Brightness, contrast and saturation scale by ``1 + f``; hue rotates by ``f * 180`` degrees."""
    out = as_tensor(img)
    if brightness:
        out = np.clip(out * (1.0 + brightness), 0.0, 1.0)
    if contrast:
        m = float((LUMA[:, None, None] * out).sum(axis=0).mean())
        out = np.clip((out - m) * (1.0 + contrast) + m, 0.0, 1.0)
    if saturation:
        gray = (LUMA[:, None, None] * out).sum(axis=0)[None]
        out = np.clip(gray + (out - gray) * (1.0 + saturation), 0.0, 1.0)
    if hue:
        hsv = rgb_to_hsv(out)
        hsv[0] = (hsv[0] + 0.5 * hue) % 1.0
        out = np.clip(hsv_to_rgb(hsv), 0.0, 1.0)
    return out


def fit_pca_basis(images) -> PcaColorBasis:
    """Eigen-decomposition of the 3x3 RGB covariance pooled over ``images``."""
    images = list(images)
    if len(images) < 2:
        raise DataError("PCA color basis needs at least two images")
    pix = np.concatenate([as_tensor(im).reshape(3, -1) for im in images], axis=1)
    cov = np.cov(pix)
    vals, vecs = np.linalg.eigh(cov)
    if not vals.max() > 1e-12:
        raise DataError("degenerate RGB covariance: images have no color variance")
    order = np.argsort(vals)[::-1]
    return PcaColorBasis(np.clip(vals[order], 0.0, None), vecs[:, order])


def krizhevsky_shift(img, basis: PcaColorBasis, rng: Rng | None = None, alphas=None) -> np.ndarray:
    """Add the spatially constant color offset ``sum_k alpha_k * lambda_k * p_k``."""
    if alphas is None:
        if rng is None:
            raise ValueError("krizhevsky_shift needs an rng or explicit alphas")
        alphas = rng.normal_array(0.0, PCA_ALPHA_STD, 3)
    delta = basis.eigenvectors @ (np.asarray(alphas, dtype=np.float64) * basis.eigenvalues)
    return np.clip(as_tensor(img) + delta[:, None, None], 0.0, 1.0)


def apply(spec: AugmentationSpec, img, rng: Rng, basis: PcaColorBasis | None = None) -> np.ndarray:
    """Apply the enabled transforms in the order flips, rotation, crop, color."""
    out = as_tensor(img)
    if spec.is_identity:
        return out.copy()
    if spec.hflip and rng.coin():
        out = hflip(out)
    if spec.vflip and rng.coin():
        out = vflip(out)
    if spec.rotation:
        out = rotate(out, rng.uniform(0.0, 360.0))
    if spec.cropping:
        scale = rng.uniform(*CROP_SCALE)
        aspect = rng.uniform(*CROP_ASPECT)
        out = crop_resize(out, scale, aspect, rng.random(), rng.random())
    if spec.color_jitter:
        factors = [rng.uniform(-JITTER_BCS, JITTER_BCS) for _ in range(3)]
        out = color_jitter(out, *factors, rng.uniform(-JITTER_HUE, JITTER_HUE))
    if spec.krizhevsky:
        if basis is None:
            raise ConfigError("Krizhevsky augmentation needs a fitted PCA color basis")
        out = krizhevsky_shift(out, basis, rng)
    return out
