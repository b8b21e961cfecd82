"""Layers of the small CNN backbone: forward/backward passes and He init.

The backbone is a plain stack of ``conv -> relu -> maxpool`` stages followed
by global average pooling and a linear head. Gradients are written by hand
per layer; there is no autograd graph.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError, StaleCacheError
from .rng import Rng
from .tensor import as_tensor, conv2d_with_cols


class ModelParams:
    """Ordered registry ``name -> (value, grad)``.

    ``version`` increases whenever values are modified through the toolkit
    (initialization, optimizer steps, loading), so caches computed against an
    older version can be rejected.
    """

    def __init__(self):
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}
        self.version = 0

    def add(self, name: str, value) -> None:
        if name in self._values:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=np.float64, copy=True)
        self._values[name] = value
        self._grads[name] = np.zeros_like(value)

    def __contains__(self, name):
        return name in self._values

    def __len__(self):
        return len(self._values)

    def names(self) -> list[str]:
        return list(self._values)

    def value(self, name: str) -> np.ndarray:
        return self._values[name]

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def items(self):
        for name in self._values:
            yield name, self._values[name], self._grads[name]

    def set_value(self, name: str, value) -> None:
        value = as_tensor(value)
        if value.shape != self._values[name].shape:
            raise ShapeError(f"{name}: shape {value.shape} != {self._values[name].shape}")
        self._values[name] = value.copy()
        self.version += 1

    def zero_grad(self) -> None:
        for g in self._grads.values():
            g.fill(0.0)

    def bump(self) -> None:
        self.version += 1

    def copy(self) -> "ModelParams":
        out = ModelParams()
        for name, v, g in self.items():
            out.add(name, v)
            out._grads[name] = g.copy()
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {name: v.copy() for name, v, _ in self.items()}

    @classmethod
    def from_state(cls, state: dict) -> "ModelParams":
        out = cls()
        for name, v in state.items():
            out.add(name, v)
        return out

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, v, _ in self.items():
            h.update(name.encode())
            h.update(str(v.shape).encode())
            h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
        return h.hexdigest()

    def num_values(self) -> int:
        return sum(v.size for v in self._values.values())


@dataclass(frozen=True)
class BackboneConfig:
    input_size: int = 64
    in_channels: int = 3
    conv_channels: tuple[int, ...] = (8, 16, 32, 64)
    kernel_size: int = 3
    pool_stride: int = 2
    feature_dim: int = 64
    head: str = "regression"
    num_classes: int = 5
    residual: bool = False

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        if self.feature_dim <= 0:
            raise ConfigError("feature_dim must be positive")
        if not self.conv_channels or self.conv_channels[-1] != self.feature_dim:
            raise ConfigError(
                f"feature_dim ({self.feature_dim}) must equal the last conv width {self.conv_channels}"
            )
        if self.head not in ("classification", "regression"):
            raise ConfigError(f"unknown head {self.head!r}")
        if self.kernel_size % 2 != 1:
            raise ConfigError("kernel_size must be odd (same padding)")
        side = self.input_size
        for _ in self.conv_channels:
            side //= self.pool_stride
        if side < 1:
            raise ConfigError(
                f"input_size {self.input_size} too small for {len(self.conv_channels)} pooling stages"
            )

    @property
    def output_dim(self) -> int:
        return self.num_classes if self.head == "classification" else 1


def build_params(config: BackboneConfig) -> ModelParams:
    """Register every backbone parameter with zero values."""
    p = ModelParams()
    k = config.kernel_size
    c_in = config.in_channels
    for s, c_out in enumerate(config.conv_channels):
        p.add(f"stage{s}.conv.weight", np.zeros((c_out, c_in, k, k)))
        p.add(f"stage{s}.conv.bias", np.zeros(c_out))
        if config.residual:
            p.add(f"stage{s}.res.weight", np.zeros((c_out, c_out, k, k)))
            p.add(f"stage{s}.res.bias", np.zeros(c_out))
        c_in = c_out
    p.add("head.weight", np.zeros((config.output_dim, config.feature_dim)))
    p.add("head.bias", np.zeros(config.output_dim))
    return p


def fan_in(shape) -> int:
    return int(math.prod(shape[1:]))


def he_init(params: ModelParams, rng: Rng) -> ModelParams:
    """Weights ~ Normal(0, sqrt(2 / fan_in)); biases zero. In place; returns ``params``."""
    for name, value, _ in params.items():
        if name.endswith(".bias"):
            value.fill(0.0)
        else:
            std = math.sqrt(2.0 / fan_in(value.shape))
            draws = rng.child(name).normal_array(0.0, std, value.size)
            value[...] = draws.reshape(value.shape)
    params.bump()
    return params


# --- individual layers -------------------------------------------------------

def linear_forward(x, w, b):
    return x @ w.T + b


def linear_backward(g, x, w):
    return g @ w, g.T @ x, g.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(g, x):
    return g * (x > 0)


def conv_forward(x, w, b):
    pad = w.shape[-1] // 2
    return conv2d_with_cols(x, w, 1, pad, b)


def conv_backward(g, cols, x_shape, w):
    f = w.shape[0]
    k = w.shape[-1]
    gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, f)
    dw = (gmat.T @ cols).reshape(w.shape)
    db = gmat.sum(axis=0)
    dcols = gmat @ w.reshape(f, -1)
    dx = kernels.col2im(dcols, tuple(x_shape), k, k, 1, k // 2)
    return dx, dw, db


def maxpool2d_forward(x, size):
    return kernels.maxpool2d_forward(np.ascontiguousarray(x), size)


def maxpool2d_backward(g, argmax, x_shape):
    return kernels.maxpool2d_backward(np.ascontiguousarray(g), argmax, tuple(x_shape))


def gap_forward(x):
    return x.mean(axis=(2, 3))


def gap_backward(g, x_shape):
    n, c, h, w = x_shape
    return np.broadcast_to((g / (h * w))[:, :, None, None], x_shape).copy()


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(probs, grad_probs):
    """Gradient w.r.t. logits given gradient w.r.t. softmax probabilities."""
    inner = (grad_probs * probs).sum(axis=1, keepdims=True)
    return probs * (grad_probs - inner)


def maxpool1d_forward(x, stride: int):
    """Non-overlapping max over windows of ``stride`` along the last axis.

    A trailing partial window is pooled on its own, so the output width is
    ``ceil(D / stride)``. Ties go to the lowest index.
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"maxpool1d expects [N, D], got {x.shape}")
    n, d = x.shape
    if d < 1 or stride < 1:
        raise ShapeError("maxpool1d needs D >= 1 and stride >= 1")
    out_d = -(-d // stride)
    padded = np.full((n, out_d * stride), -np.inf)
    padded[:, :d] = x
    win = padded.reshape(n, out_d, stride)
    local = win.argmax(axis=2)
    idx = np.arange(out_d)[None, :] * stride + local
    return np.take_along_axis(x, idx, axis=1), idx


def maxpool1d_backward(g, idx, d: int):
    grad = np.zeros((g.shape[0], d))
    np.put_along_axis(grad, idx, g, axis=1)
    return grad


def maxpool1d(x, stride: int):
    return maxpool1d_forward(x, stride)[0]


# --- backbone ----------------------------------------------------------------

@dataclass
class LayerCache:
    params_id: int
    version: int
    input_shape: tuple
    stages: list = field(default_factory=list)
    features: np.ndarray | None = None
    last_shape: tuple | None = None


def forward(config: BackboneConfig, params: ModelParams, batch, keep_cache: bool = True):
    """Run the backbone. Returns ``(output, features, cache)``.

    ``output`` is logits ``[N, num_classes]`` or scores ``[N, 1]``; ``features``
    are the global-average-pooled activations ``[N, feature_dim]``.
    """
    x = as_tensor(batch)
    expected = (config.in_channels, config.input_size, config.input_size)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ShapeError(f"backbone expects [N, {expected[0]}, {expected[1]}, {expected[2]}], got {x.shape}")
    cache = LayerCache(id(params), params.version, x.shape)
    h = x
    for s in range(len(config.conv_channels)):
        entry = {"x_shape": h.shape}
        pre, cols = conv_forward(h, params.value(f"stage{s}.conv.weight"), params.value(f"stage{s}.conv.bias"))
        act = relu_forward(pre)
        if keep_cache:
            entry.update(cols=cols, x=h, pre=pre)
        if config.residual:
            rpre, rcols = conv_forward(act, params.value(f"stage{s}.res.weight"), params.value(f"stage{s}.res.bias"))
            summed = act + rpre
            if keep_cache:
                entry.update(rcols=rcols, act=act, summed=summed)
            act = relu_forward(summed)
        pooled, argmax = maxpool2d_forward(act, config.pool_stride)
        if keep_cache:
            entry.update(argmax=argmax, act_shape=act.shape)
            cache.stages.append(entry)
        h = pooled
    cache.last_shape = h.shape
    features = gap_forward(h)
    out = linear_forward(features, params.value("head.weight"), params.value("head.bias"))
    if keep_cache:
        cache.features = features
    return out, features, cache


def backward(config: BackboneConfig, params: ModelParams, cache: LayerCache, grad_output) -> ModelParams:
    """Accumulate d(loss)/d(param) into ``params`` grads; returns ``params``."""
    if cache.params_id != id(params) or cache.version != params.version:
        raise StaleCacheError("layer cache does not match the current parameters")
    if cache.features is None or len(cache.stages) != len(config.conv_channels):
        raise StaleCacheError("forward was run without keep_cache")
    g = as_tensor(grad_output)
    dfeat, dw, db = linear_backward(g, cache.features, params.value("head.weight"))
    params.grad("head.weight")[...] += dw
    params.grad("head.bias")[...] += db
    dh = gap_backward(dfeat, cache.last_shape)
    for s in reversed(range(len(config.conv_channels))):
        e = cache.stages[s]
        dact = maxpool2d_backward(dh, e["argmax"], e["act_shape"])
        if config.residual:
            dsum = relu_backward(dact, e["summed"])
            dres_in, dw, db = conv_backward(dsum, e["rcols"], e["act"].shape, params.value(f"stage{s}.res.weight"))
            params.grad(f"stage{s}.res.weight")[...] += dw
            params.grad(f"stage{s}.res.bias")[...] += db
            dact = dsum + dres_in
            dpre = relu_backward(dact, e["pre"])
        else:
            dpre = relu_backward(dact, e["pre"])
        dh, dw, db = conv_backward(dpre, e["cols"], e["x_shape"], params.value(f"stage{s}.conv.weight"))
        params.grad(f"stage{s}.conv.weight")[...] += dw
        params.grad(f"stage{s}.conv.bias")[...] += db
    return params


def predict(config: BackboneConfig, params: ModelParams, images, chunk: int = 64):
    """Inference in chunks. Returns ``(outputs, features)`` without caches."""
    images = as_tensor(images)
    outs, feats = [], []
    for i in range(0, len(images), chunk):
        o, f, _ = forward(config, params, images[i:i + chunk], keep_cache=False)
        outs.append(o)
        feats.append(f)
    if not outs:
        return np.zeros((0, config.output_dim)), np.zeros((0, config.feature_dim))
    return np.concatenate(outs), np.concatenate(feats)
