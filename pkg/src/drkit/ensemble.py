"""Multi-model (seed) and multi-view (test-time augmentation) prediction averaging.

Predictions are averaged in continuous space and converted to grades once:
regression scores are averaged then clipped and rounded; classification
heads average softmax probabilities then take the argmax.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import augment as aug
from . import layers as L
from .errors import ConfigError
from .objectives import outputs_to_grades
from .preprocess import NormStats
from .rng import Rng

ENSEMBLE_KINDS = ("none", "multi_model", "multi_view")


@dataclass(frozen=True)
class EnsembleSpec:
    kind: str = "none"
    seeds: tuple[int, ...] = ()
    view_count: int = 1

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.kind not in ENSEMBLE_KINDS:
            raise ConfigError(f"unknown ensemble kind {self.kind!r}")
        if self.kind == "multi_model" and len(self.seeds) < 1:
            raise ConfigError("multi_model ensemble needs at least one seed")
        if self.view_count < 1:
            raise ConfigError("view_count must be >= 1")


def continuous_output(config: L.BackboneConfig, outputs) -> np.ndarray:
    """Score vector (regression) or probability matrix (classification)."""
    outputs = np.asarray(outputs)
    if config.head == "classification":
        return L.softmax(outputs)
    return outputs[:, 0]


def to_grades(config: L.BackboneConfig, averaged) -> np.ndarray:
    if config.head == "classification":
        return np.asarray(averaged).argmax(axis=1).astype(np.int64)
    return outputs_to_grades("regression", np.asarray(averaged))


def predict_multi_model(members, batch):
    """Average continuous predictions of ``[(config, params), ...]`` over ``batch``.

    Returns ``(averaged, grades)``.
    """
    if not members:
        raise ConfigError("empty model ensemble")
    config = members[0][0]
    total = None
    for cfg, params in members:
        if cfg != config:
            raise ConfigError("ensemble members must share one backbone configuration")
        out, _ = L.predict(cfg, params, batch)
        cont = continuous_output(cfg, out)
        total = cont if total is None else total + cont
    averaged = total / len(members)
    return averaged, to_grades(config, averaged)


def random_view(img, rng: Rng):
    """One test-time view: random flips and rotation of a ``[0, 1]`` image."""
    out = img
    if rng.coin():
        out = aug.hflip(out)
    if rng.coin():
        out = aug.vflip(out)
    return aug.rotate(out, rng.uniform(0.0, 360.0))


def view_images(images, v: int, rng: Rng) -> np.ndarray:
    """View ``v`` of every image; view 0 is the untouched original."""
    if v == 0:
        return images
    return np.stack([random_view(im, rng.child(v, i)) for i, im in enumerate(images)])


def predict_multi_view(config: L.BackboneConfig, params: L.ModelParams, images, stats: NormStats,
                       view_count: int, rng: Rng):
    """Average predictions over the original view plus ``view_count - 1`` random views.

    ``images`` are ``[0, 1]`` images; views are generated before z-scoring.
    View ``v`` of image ``i`` uses ``rng.child(v, i)``. Returns ``(averaged, grades)``.
    """
    if view_count < 1:
        raise ConfigError("view_count must be >= 1")
    images = np.asarray(images, dtype=np.float64)
    mean = np.asarray(stats.mean)[:, None, None]
    std = np.asarray(stats.std)[:, None, None]
    total = None
    for v in range(view_count):
        out, _ = L.predict(config, params, (view_images(images, v, rng) - mean) / std)
        cont = continuous_output(config, out)
        total = cont if total is None else total + cont
    averaged = total / view_count
    return averaged, to_grades(config, averaged)
