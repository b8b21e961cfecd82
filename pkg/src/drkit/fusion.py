"""Paired-eye feature fusion head.

The head sees ``[features_self || features_other]`` and runs three
``linear -> maxpool1d(2) -> relu`` blocks down to a single regression score.
The other eye is predicted by swapping the concatenation order through the
same parameters.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import layers as L
from .errors import ConfigError, DataError, ShapeError
from .objectives import regression_loss
from .optim import OptimizerState, sgd_step
from .rng import Rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FusionConfig:
    feature_dim: int = 64
    widths: tuple[int, ...] | None = None  # pre-pooling widths of the three linear layers
    pool_stride: int = 2

    def __post_init__(self):
        if self.widths is None:
            d = self.feature_dim
            object.__setattr__(self, "widths", (2 * d, d, 2))
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) != 3 or min(self.widths) < 1:
            raise ConfigError("fusion head needs three positive layer widths")
        if self.pooled_widths[-1] != 1:
            raise ConfigError(f"last fusion layer must pool to one score, widths={self.widths}")

    @property
    def input_dim(self) -> int:
        return 2 * self.feature_dim

    @property
    def pooled_widths(self) -> tuple[int, ...]:
        return tuple(-(-w // self.pool_stride) for w in self.widths)


def build_fusion_params(cfg: FusionConfig) -> L.ModelParams:
    p = L.ModelParams()
    fan = cfg.input_dim
    for k, (w, pooled) in enumerate(zip(cfg.widths, cfg.pooled_widths)):
        p.add(f"fusion.l{k}.weight", np.zeros((w, fan)))
        p.add(f"fusion.l{k}.bias", np.zeros(w))
        fan = pooled
    return p


def fusion_forward(cfg: FusionConfig, params: L.ModelParams, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ShapeError(f"fusion input must be [N, {cfg.input_dim}], got {x.shape}")
    cache = {"version": params.version, "params_id": id(params), "blocks": []}
    h = x
    for k in range(len(cfg.widths)):
        z = L.linear_forward(h, params.value(f"fusion.l{k}.weight"), params.value(f"fusion.l{k}.bias"))
        pooled, idx = L.maxpool1d_forward(z, cfg.pool_stride)
        cache["blocks"].append((h, idx, z.shape[1], pooled))
        h = L.relu_forward(pooled)
    return h, cache


def fusion_backward(cfg: FusionConfig, params: L.ModelParams, cache, grad_output) -> L.ModelParams:
    if cache["params_id"] != id(params) or cache["version"] != params.version:
        raise L.StaleCacheError("fusion cache does not match the current parameters")
    g = np.asarray(grad_output, dtype=np.float64)
    for k in reversed(range(len(cfg.widths))):
        h_in, idx, width, pooled = cache["blocks"][k]
        g = L.relu_backward(g, pooled)
        g = L.maxpool1d_backward(g, idx, width)
        g, dw, db = L.linear_backward(g, h_in, params.value(f"fusion.l{k}.weight"))
        params.grad(f"fusion.l{k}.weight")[...] += dw
        params.grad(f"fusion.l{k}.bias")[...] += db
    return params


def fuse_scores(cfg: FusionConfig, params: L.ModelParams, feat_self, feat_other) -> np.ndarray:
    """Scores ``[N]`` for rows of ``feat_self`` given their partners' features."""
    a = np.atleast_2d(np.asarray(feat_self, dtype=np.float64))
    b = np.atleast_2d(np.asarray(feat_other, dtype=np.float64))
    if a.shape != b.shape or a.shape[1] != cfg.feature_dim:
        raise ShapeError(f"feature shapes {a.shape} and {b.shape} do not match feature_dim={cfg.feature_dim}")
    out, _ = fusion_forward(cfg, params, np.concatenate([a, b], axis=1))
    return out[:, 0]


def fuse_predict(cfg: FusionConfig, params: L.ModelParams, feat_self, feat_other) -> float:
    """Score for one eye; call again with the arguments swapped for the other eye."""
    a = np.asarray(feat_self, dtype=np.float64).reshape(-1)
    b = np.asarray(feat_other, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(f"feature lengths differ: {a.shape} vs {b.shape}")
    return float(fuse_scores(cfg, params, a[None], b[None])[0])


def partner_features(features, partners):
    """Partner feature rows; unpaired samples are paired with themselves.

    Returns ``(partner_feats, n_self_paired)``.
    """
    partners = np.asarray(partners, dtype=np.int64)
    idx = np.where(partners >= 0, partners, np.arange(len(partners)))
    return features[idx], int((partners < 0).sum())


@dataclass
class FeatureScaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, feats):
        std = feats.std(axis=0)
        return cls(feats.mean(axis=0), np.where(std > 1e-12, std, 1.0))

    def __call__(self, feats):
        return (feats - self.mean) / self.std


@dataclass
class FusionModel:
    config: FusionConfig
    params: L.ModelParams
    scaler: FeatureScaler
    self_paired: int = 0
    history: list | None = None

    def scores(self, features, partners) -> np.ndarray:
        feats = self.scaler(features)
        other, _ = partner_features(feats, partners)
        return fuse_scores(self.config, self.params, feats, other)


def train_fusion_head(features, partners, labels, cfg: FusionConfig, *, epochs: int = 20, batch_size: int = 64,
                      lr: float = 0.02, momentum: float = 0.9, weight_decay: float = 0.0005, seed: int = 0) -> FusionModel:
    """Fit the fusion head with MSE on frozen per-image features (constant learning rate).

    Hidden layers get He init; the last layer starts with zero weights and the
    mean training grade as bias.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(features) != len(labels) or len(partners) != len(labels):
        raise DataError("features, partners and labels must have equal length")
    if len(labels) == 0:
        raise DataError("no training samples for the fusion head")
    scaler = FeatureScaler.fit(features)
    feats = scaler(features)
    other, n_self = partner_features(feats, partners)
    x = np.concatenate([feats, other], axis=1)
    rng = Rng(seed)
    params = L.he_init(build_fusion_params(cfg), rng.child("fusion-init"))
    # start from the mean grade with a live final ReLU; a He-initialized last layer
    # overshoots on the first steps and can shut the output unit for good
    last = len(cfg.widths) - 1
    params.value(f"fusion.l{last}.weight")[...] = 0.0
    params.value(f"fusion.l{last}.bias")[...] = labels.mean()
    params.bump()
    opt = OptimizerState(lr, momentum, weight_decay)
    history = []
    for epoch in range(epochs):
        order = np.argsort(rng.child("fusion-order", epoch).random_array(len(labels)), kind="stable")
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            out, cache = fusion_forward(cfg, params, x[idx])
            loss = regression_loss(out, labels[idx], "mse")
            fusion_backward(cfg, params, cache, loss.grad)
            sgd_step(params, opt, lr)
            total += loss.value * len(idx)
        history.append(total / len(order))
        if not math.isfinite(history[-1]):
            raise DataError("fusion training diverged")
    out, _ = fusion_forward(cfg, params, x)
    if not np.any(out):
        # the final ReLU is shut for every sample, so no gradient can revive it
        log.warning("fusion head outputs 0 for every training sample (dead ReLU); try a lower fusion lr than %g", lr)
    return FusionModel(cfg, params, scaler, n_self, history)


def train_fusion(backbone_config, backbone_params: L.ModelParams, images, partners, labels, cfg: FusionConfig,
                 **kwargs) -> FusionModel:
    """Extract features with the frozen backbone and fit the fusion head on them.

    ``images`` are normalized network inputs. The backbone parameters are only
    read; their values and gradients are left untouched.
    """
    if cfg.feature_dim != backbone_config.feature_dim:
        raise ConfigError("fusion feature_dim must match the backbone feature_dim")
    _, feats = L.predict(backbone_config, backbone_params, images)
    return train_fusion_head(feats, partners, labels, cfg, **kwargs)
