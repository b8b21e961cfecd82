"""Objective functions with analytic gradients, and the regression inference rule.

Classification losses take softmax probabilities ``[N, C]`` and integer
grades; they return the gradient with respect to the probabilities.
``compute_loss`` wraps them for raw model outputs (logits or scores) and
returns the gradient with respect to those outputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NonFiniteError, ShapeError
from .layers import softmax, softmax_backward

PROB_EPS = 1e-12
KAPPA_EPS = 1e-8

CLASSIFICATION_LOSSES = ("ce", "focal", "kappa", "kappa_plus_ce")
REGRESSION_LOSSES = ("mae", "mse", "smooth_l1")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "ce"
    gamma: float = 2.0
    mix: float = 0.5
    num_classes: int = 5

    def __post_init__(self):
        if self.kind not in CLASSIFICATION_LOSSES + REGRESSION_LOSSES:
            raise ConfigError(f"unknown loss {self.kind!r}")
        if self.gamma < 0:
            raise ConfigError("focal gamma must be >= 0")
        if not 0 <= self.mix <= 1:
            raise ConfigError("kappa_plus_ce mix must lie in [0, 1]")

    @property
    def head(self) -> str:
        return "classification" if self.kind in CLASSIFICATION_LOSSES else "regression"


@dataclass
class LossOutput:
    value: float
    grad: np.ndarray


def _labels(labels, n, num_classes):
    y = np.asarray(labels)
    if y.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if np.any(y != np.round(y)):
            raise ValueError("labels must be integer grades")
        y = y.astype(np.int64)
    if n and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes - 1}]")
    return y


def _probs(probs):
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise ShapeError(f"probabilities must be [N, C], got {p.shape}")
    return p


def cross_entropy(probs, labels) -> LossOutput:
    """Mean negative log-probability of the true grade."""
    p = _probs(probs)
    n, c = p.shape
    y = _labels(labels, n, c)
    rows = np.arange(n)
    pt = np.clip(p[rows, y], PROB_EPS, 1.0)
    grad = np.zeros_like(p)
    grad[rows, y] = -1.0 / (n * pt)
    return LossOutput(float(-np.log(pt).sum() / n), grad)


def focal(probs, labels, gamma: float = 2.0) -> LossOutput:
    """Cross-entropy scaled per sample by ``(1 - p_true) ** gamma``."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    p = _probs(probs)
    n, c = p.shape
    y = _labels(labels, n, c)
    rows = np.arange(n)
    pt = np.clip(p[rows, y], PROB_EPS, 1.0)
    q = 1.0 - pt
    logp = np.log(pt)
    value = -(q ** gamma * logp).sum() / n
    if gamma == 0:
        dpt = -1.0 / pt
    else:
        # d/dp [-(1-p)^g log p] = g (1-p)^(g-1) log p - (1-p)^g / p; the first term is 0 at p = 1
        with np.errstate(divide="ignore", invalid="ignore"):
            first = np.where(q > 0, gamma * q ** (gamma - 1.0) * logp, 0.0)
        dpt = first - q ** gamma / pt
    grad = np.zeros_like(p)
    grad[rows, y] = dpt / n
    return LossOutput(float(value), grad)


def kappa_weights(num_classes: int) -> np.ndarray:
    idx = np.arange(num_classes, dtype=np.float64)
    return (idx[:, None] - idx[None, :]) ** 2 / (num_classes - 1) ** 2


def kappa_loss(probs, labels) -> LossOutput:
    """Soft quadratic-kappa loss ``o / e`` (equivalently one minus soft kappa).

    ``o = sum_i sum_n w[y_i, n] p[i, n]`` is the weighted soft disagreement and
    ``e = sum_{m,n} w[m, n] hist_true[n] * pred_mass[m] / N`` the disagreement
    expected from the batch marginals. Perfect one-hot predictions give 0.
    """
    p = _probs(probs)
    n, c = p.shape
    if n == 0:
        raise ValueError("kappa loss needs a non-empty batch")
    y = _labels(labels, n, c)
    w = kappa_weights(c)
    hist_true = np.bincount(y, minlength=c).astype(np.float64)
    pred_mass = p.sum(axis=0)
    o = float((w[y] * p).sum())
    expected_row = (w @ hist_true) / n  # de/dp[i, m], identical for every sample i
    e = float(pred_mass @ expected_row)
    denom = e + KAPPA_EPS
    value = o / denom
    grad = (w[y] * denom - o * expected_row[None, :]) / denom ** 2
    return LossOutput(value, grad)


def kappa_plus_ce(probs, labels, mix: float = 0.5) -> LossOutput:
    if not 0 <= mix <= 1:
        raise ValueError("mix must lie in [0, 1]")
    k = kappa_loss(probs, labels)
    ce = cross_entropy(probs, labels)
    return LossOutput(mix * k.value + (1.0 - mix) * ce.value, mix * k.grad + (1.0 - mix) * ce.grad)


def regression_loss(scores, labels, kind: str) -> LossOutput:
    """MAE, MSE or SmoothL1 between scores ``[N, 1]`` and integer grades, batch-averaged."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim == 2 and s.shape[1] == 1:
        flat = s[:, 0]
    elif s.ndim == 1:
        flat = s
    else:
        raise ShapeError(f"scores must be [N, 1], got {s.shape}")
    n = flat.shape[0]
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {y.shape}")
    d = flat - y
    a = np.abs(d)
    if kind == "mae":
        value, g = a.sum(), np.sign(d)
    elif kind == "mse":
        value, g = (d * d).sum(), 2.0 * d
    elif kind == "smooth_l1":
        small = a < 1.0
        value = np.where(small, 0.5 * d * d, a - 0.5).sum()
        g = np.where(small, d, np.sign(d))
    else:
        raise ValueError(f"unknown regression loss {kind!r}")
    n = max(n, 1)
    return LossOutput(float(value / n), (g / n).reshape(s.shape))


def compute_loss(spec: LossSpec, output, labels) -> LossOutput:
    """Loss and gradient with respect to the raw model output."""
    output = np.asarray(output, dtype=np.float64)
    if spec.head == "regression":
        with np.errstate(over="ignore", invalid="ignore"):
            out = regression_loss(output, labels, spec.kind)
    else:
        probs = softmax(output)
        if spec.kind == "ce":
            # fused softmax + CE gradient
            base = cross_entropy(probs, labels)
            y = np.asarray(labels, dtype=np.int64)
            onehot = np.zeros_like(probs)
            onehot[np.arange(len(y)), y] = 1.0
            out = LossOutput(base.value, (probs - onehot) / len(y))
        else:
            if spec.kind == "focal":
                base = focal(probs, labels, spec.gamma)
            elif spec.kind == "kappa":
                base = kappa_loss(probs, labels)
            else:
                base = kappa_plus_ce(probs, labels, spec.mix)
            out = LossOutput(base.value, softmax_backward(probs, base.grad))
    if not math.isfinite(out.value) or not np.all(np.isfinite(out.grad)):
        raise NonFiniteError(f"{spec.kind} loss produced a non-finite value or gradient")
    return out


def score_to_grade(score: float, max_grade: int = 4) -> int:
    """Clip a regression score to ``[0, max_grade]`` and round half away from zero."""
    score = float(score)
    if math.isnan(score):
        raise ValueError("score is NaN")
    clipped = min(max(score, 0.0), float(max_grade))
    return int(math.floor(clipped + 0.5))


def scores_to_grades(scores, max_grade: int = 4) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if np.any(np.isnan(s)):
        raise ValueError("scores contain NaN")
    return np.floor(np.clip(s, 0.0, float(max_grade)) + 0.5).astype(np.int64)


def outputs_to_grades(head: str, outputs) -> np.ndarray:
    """Grades from raw outputs: argmax of logits, or clip-and-round of scores."""
    outputs = np.asarray(outputs, dtype=np.float64)
    if head == "classification":
        return outputs.argmax(axis=1).astype(np.int64)
    return scores_to_grades(outputs[:, 0] if outputs.ndim == 2 else outputs)
