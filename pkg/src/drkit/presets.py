"""Named experiment matrices for ``ablate``.

Each preset maps a base config to a list of ``(row_name, config, flags)``.
Resolution rows use ``base.resolution`` as the high setting and half of it
as the low one. Multistep milestones are scaled from a 25-epoch budget to
``base.epochs``.
"""
from __future__ import annotations

from .augment import AUGMENTATION_PRESETS
from .config import RunConfig
from .errors import ConfigError
from .objectives import CLASSIFICATION_LOSSES, REGRESSION_LOSSES
from .optim import SCHEDULE_KINDS
from .preprocess import ENHANCEMENTS
from .sampling import SAMPLER_KINDS

BEST_AUGMENTATION = "flip_rotation_crop_jitter"
ENSEMBLE_SIZE = 5


def _scaled_milestones(epochs: int) -> list[int]:
    return sorted({max(1, round(m * epochs / 25)) for m in (15, 20)})


def stacked(base: RunConfig):
    """Refinements stacked one at a time on a low-resolution CE baseline."""
    aug = AUGMENTATION_PRESETS[BEST_AUGMENTATION]
    cfg = base.replace(resolution=max(8, base.resolution // 2), **{"loss.kind": "ce"})
    rows = [("baseline", cfg, {})]
    flags: dict = {}
    steps = [
        ("HR", {"resolution": base.resolution}),
        ("MSE", {"loss.kind": "mse"}),
        ("CD", {"schedule.kind": "cosine"}),
        ("DA", {"augmentation": aug}),
        ("PFF", {"fusion.enabled": True}),
        ("ENS", {"ensemble.kind": "multi_model",
                 "ensemble.seeds": [base.seed + k for k in range(ENSEMBLE_SIZE)]}),
    ]
    for flag, change in steps:
        cfg = cfg.replace(**change)
        flags = {**flags, flag: True}
        rows.append(("+" + flag, cfg, flags))
    return rows


def resolution(base: RunConfig):
    sides = sorted({max(16, base.resolution // 4), max(16, base.resolution // 2), base.resolution})
    return [(f"res{s}", base.replace(resolution=s), {}) for s in sides]


def loss(base: RunConfig):
    return [(k, base.replace(**{"loss.kind": k}), {}) for k in CLASSIFICATION_LOSSES + REGRESSION_LOSSES]


def schedule(base: RunConfig):
    rows = []
    for k in SCHEDULE_KINDS:
        change = {"schedule.kind": k}
        if k == "multistep":
            change["schedule.milestones"] = _scaled_milestones(base.epochs)
        rows.append((k, base.replace(**change), {}))
    return rows


def augmentation(base: RunConfig):
    return [(name, base.replace(augmentation=spec), {}) for name, spec in AUGMENTATION_PRESETS.items()]


def sampler(base: RunConfig):
    return [(k, base.replace(**{"sampler.kind": k}), {}) for k in SAMPLER_KINDS]


def enhancement(base: RunConfig):
    return [(k, base.replace(**{"preprocess.enhance": k}), {}) for k in ENHANCEMENTS]


def ensemble(base: RunConfig):
    rows = [("single", base, {})]
    for n in (2, 3, 5):
        rows.append((f"models{n}", base.replace(**{"ensemble.kind": "multi_model",
                                                   "ensemble.seeds": [base.seed + k for k in range(n)]}), {}))
    for n in (2, 3, 5):
        rows.append((f"views{n}", base.replace(**{"ensemble.kind": "multi_view", "ensemble.view_count": n}), {}))
    return rows


PRESETS = {
    "stacked": stacked, "resolution": resolution, "loss": loss, "schedule": schedule,
    "augmentation": augmentation, "sampler": sampler, "enhance": enhancement, "ensemble": ensemble,
}


def build_preset(name: str, base: RunConfig):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name](base)
