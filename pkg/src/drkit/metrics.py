"""Confusion matrices and the quadratic weighted kappa."""
from __future__ import annotations

import numpy as np

from .objectives import kappa_weights


def confusion(labels, preds, num_classes: int = 5) -> np.ndarray:
    """Integer ``C x C`` counts; rows are true grades, columns predictions."""
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    p = np.asarray(preds, dtype=np.int64).reshape(-1)
    if y.shape != p.shape:
        raise ValueError(f"labels ({y.size}) and predictions ({p.size}) differ in length")
    for name, v in (("label", y), ("prediction", p)):
        if v.size and (v.min() < 0 or v.max() >= num_classes):
            raise ValueError(f"{name} grade outside [0, {num_classes - 1}]")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y, p), 1)
    return cm


def quadratic_weighted_kappa(cm) -> float:
    """``1 - sum(w * o) / sum(w * e)`` with ``e`` the outer product of marginals over the total.

    A matrix whose expected weighted disagreement is zero (all mass in one
    cell) scores 1.
    """
    o = np.asarray(cm, dtype=np.float64)
    if o.ndim != 2 or o.shape[0] != o.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {o.shape}")
    total = o.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    w = kappa_weights(o.shape[0])
    e = np.outer(o.sum(axis=1), o.sum(axis=0)) / total
    num = float((w * o).sum())
    den = float((w * e).sum())
    if den == 0.0:
        if num == 0.0:
            return 1.0
        raise ValueError("degenerate confusion matrix")
    return 1.0 - num / den


def kappa_score(labels, preds, num_classes: int = 5) -> float:
    return quadratic_weighted_kappa(confusion(labels, preds, num_classes))


def normalize_rows(cm) -> np.ndarray:
    """Divide each row by its sum; all-zero rows stay zero."""
    m = np.asarray(cm, dtype=np.float64)
    sums = m.sum(axis=1, keepdims=True)
    return np.divide(m, sums, out=np.zeros_like(m), where=sums != 0)


def mean_quadratic_distance(cm) -> float:
    """Average squared grade distance between prediction and truth."""
    m = np.asarray(cm, dtype=np.float64)
    idx = np.arange(m.shape[0])
    d2 = (idx[:, None] - idx[None, :]) ** 2
    return float((d2 * m).sum() / m.sum())
