"""Run configuration: nested frozen dataclasses, YAML files and a stable hash."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .augment import BASELINE_AUGMENTATION, AugmentationSpec
from .ensemble import EnsembleSpec
from .errors import ConfigError
from .fusion import FusionConfig
from .layers import BackboneConfig
from .objectives import LossSpec
from .optim import ScheduleSpec
from .preprocess import ClaheParams, GrahamParams, PreprocessOptions
from .sampling import SamplerSpec


@dataclass(frozen=True)
class BackboneSpec:
    conv_channels: tuple[int, ...] = (8, 16, 32, 64)
    kernel_size: int = 3
    residual: bool = False

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))


@dataclass(frozen=True)
class PreprocessSpec:
    enhance: str = "none"
    graham: GrahamParams = field(default_factory=GrahamParams)
    clahe: ClaheParams = field(default_factory=ClaheParams)


@dataclass(frozen=True)
class OptimizerSpec:
    momentum: float = 0.9
    weight_decay: float = 0.0005


@dataclass(frozen=True)
class FusionSpec:
    enabled: bool = False
    epochs: int = 20
    batch_size: int = 64
    lr: float = 0.02


@dataclass(frozen=True)
class RunConfig:
    resolution: int = 64
    loss: LossSpec = field(default_factory=LossSpec)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    augmentation: AugmentationSpec = BASELINE_AUGMENTATION
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    preprocess: PreprocessSpec = field(default_factory=PreprocessSpec)
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    fusion: FusionSpec = field(default_factory=FusionSpec)
    ensemble: EnsembleSpec = field(default_factory=EnsembleSpec)
    seed: int = 0
    epochs: int = 25
    batch_size: int = 16
    epoch_size: int | None = None  # samples drawn per epoch; None means the training-set size

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.epoch_size is not None and self.epoch_size < 1:
            raise ConfigError("epoch_size must be >= 1")
        # fail early on inconsistent sub-configs
        self.backbone_config()
        self.preprocess_options()

    def backbone_config(self) -> BackboneConfig:
        ch = self.backbone.conv_channels
        return BackboneConfig(
            input_size=self.resolution, conv_channels=ch, kernel_size=self.backbone.kernel_size,
            feature_dim=ch[-1] if ch else 0, head=self.loss.head, num_classes=self.loss.num_classes,
            residual=self.backbone.residual,
        )

    def preprocess_options(self) -> PreprocessOptions:
        p = self.preprocess
        return PreprocessOptions(self.resolution, p.enhance, p.graham, p.clahe)

    def schedule_spec(self) -> ScheduleSpec:
        return dataclasses.replace(self.schedule, total_epochs=self.epochs)

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(feature_dim=self.backbone_config().feature_dim)

    def member_seeds(self) -> tuple[int, ...]:
        if self.ensemble.kind == "multi_model":
            return self.ensemble.seeds
        return (self.seed,)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build(cls, data or {}, "")

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def replace(self, **changes) -> "RunConfig":
        """Copy with dotted-path overrides, e.g. ``replace(**{"loss.kind": "mse"})``."""
        data = self.to_dict()
        for path, value in changes.items():
            node = data
            keys = path.replace("__", ".").split(".")
            for k in keys[:-1]:
                if k not in node or not isinstance(node[k], dict):
                    raise ConfigError(f"unknown config section {path!r}")
                node = node[k]
            if keys[-1] not in node:
                raise ConfigError(f"unknown config field {path!r}")
            node[keys[-1]] = _plain(dataclasses.asdict(value)) if dataclasses.is_dataclass(value) else value
        return RunConfig.from_dict(data)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"config section {where or '<root>'} must be a mapping")
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config keys in {where or '<root>'}: {sorted(unknown)}")
    kwargs = {}
    for name in names:
        if name not in data:
            continue
        current = getattr(defaults, name)
        value = data[name]
        if dataclasses.is_dataclass(current):
            value = _build(type(current), value, f"{where}.{name}".lstrip("."))
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad config section {where or '<root>'}: {exc}") from exc


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return RunConfig.from_dict(data)


def save_config(config: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=True))
