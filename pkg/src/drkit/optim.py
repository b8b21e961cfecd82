"""SGD with Nesterov momentum and the learning-rate schedules."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NonFiniteError
from .layers import ModelParams

SCHEDULE_KINDS = ("constant", "multistep", "exponential", "cosine")


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = "constant"
    lr0: float = 0.001
    milestones: tuple[int, ...] = (15, 20)
    factor: float = 0.1
    gamma: float = 0.9
    total_epochs: int = 25

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown schedule {self.kind!r}; expected one of {SCHEDULE_KINDS}")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ConfigError("milestones must be strictly increasing")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.total_epochs < 1:
            raise ConfigError("total_epochs must be >= 1")


def lr_at(spec: ScheduleSpec, t: int) -> float:
    """Learning rate for epoch index ``t`` (0-based)."""
    if t < 0:
        raise ValueError("epoch index must be >= 0")
    if spec.kind == "constant":
        return spec.lr0
    if spec.kind == "multistep":
        passed = sum(1 for m in spec.milestones if m <= t)
        return spec.lr0 * spec.factor ** passed
    if spec.kind == "exponential":
        return spec.gamma ** t * spec.lr0
    if t > spec.total_epochs:
        raise ValueError(f"cosine schedule defined for 0 <= t <= {spec.total_epochs}, got {t}")
    return 0.5 * (1.0 + math.cos(t * math.pi / spec.total_epochs)) * spec.lr0


@dataclass
class OptimizerState:
    lr0: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")


def sgd_step(params: ModelParams, state: OptimizerState, lr: float):
    """One Nesterov step, in place.

    ``g <- g + wd * theta``; ``v <- mu * v + g``; ``theta <- theta - lr * (g + mu * v)``.
    Grads are zeroed afterwards. Returns ``(params, state)``.
    """
    mu, wd = state.momentum, state.weight_decay
    for name, value, grad in params.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"gradient of {name} is not finite")
        g = grad + wd * value if wd else grad.copy()
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(value)
        v = mu * v + g
        state.velocity[name] = v
        value -= lr * (g + mu * v)
    params.zero_grad()
    params.bump()
    return params, state
