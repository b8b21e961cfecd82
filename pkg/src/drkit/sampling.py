"""Instance-, class- and progressively-balanced epoch samplers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .rng import Rng

SAMPLER_KINDS = ("instance", "class_balanced", "progressive")


@dataclass(frozen=True)
class SamplerSpec:
    kind: str = "instance"
    alpha: float = 0.98

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ConfigError(f"unknown sampler {self.kind!r}; expected one of {SAMPLER_KINDS}")
        if not 0 <= self.alpha <= 1:
            raise ConfigError("progressive alpha must lie in [0, 1]")


@dataclass
class SamplerState:
    kind: str
    labels: np.ndarray
    epoch: int = 0
    alpha: float = 0.98

    @classmethod
    def from_spec(cls, spec: SamplerSpec, labels, epoch: int = 0):
        return cls(spec.kind, np.asarray(labels, dtype=np.int64), epoch, spec.alpha)

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=5) if self.labels.size else np.zeros(5, dtype=np.int64)


def instance_weights(labels) -> np.ndarray:
    n = len(labels)
    if n == 0:
        raise DataError("cannot sample from an empty dataset")
    return np.full(n, 1.0 / n)


def class_balanced_weights(labels) -> np.ndarray:
    """Every non-empty class gets mass ``1/K``, split evenly among its samples."""
    y = np.asarray(labels, dtype=np.int64)
    if y.size == 0:
        raise DataError("cannot sample from an empty dataset")
    counts = np.bincount(y)
    k = np.count_nonzero(counts)
    return 1.0 / (k * counts[y])


def progressive_weights(labels, alpha: float, epoch: int) -> np.ndarray:
    """``alpha**t * p_cb + (1 - alpha**t) * p_ib``."""
    a = alpha ** epoch
    return a * class_balanced_weights(labels) + (1.0 - a) * instance_weights(labels)


def sample_weights(state: SamplerState) -> np.ndarray:
    if state.kind == "instance":
        return instance_weights(state.labels)
    if state.kind == "class_balanced":
        return class_balanced_weights(state.labels)
    if state.kind == "progressive":
        return progressive_weights(state.labels, state.alpha, state.epoch)
    raise ConfigError(f"unknown sampler {state.kind!r}")


def draw_from_weights(weights, rng: Rng, size: int) -> np.ndarray:
    """``size`` independent draws with replacement by inverse-CDF lookup."""
    cdf = np.cumsum(weights)
    u = rng.random_array(size) * cdf[-1]
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1).astype(np.int64)


def draw_epoch(state: SamplerState, rng: Rng, epoch_size: int | None = None) -> np.ndarray:
    """Ordered sample indices for one epoch (the epoch plan)."""
    w = sample_weights(state)
    size = len(w) if epoch_size is None else epoch_size
    return draw_from_weights(w, rng, size)


def class_histogram(labels, plan, num_classes: int = 5) -> list[int]:
    return np.bincount(np.asarray(labels)[plan], minlength=num_classes).tolist()
