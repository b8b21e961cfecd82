"""Experiment runner: training loop, evaluation, pair fusion and ablation tables.

``run`` returns a ``RunResult`` whose ``report`` is a plain dict that depends
only on the config, the seed and the data; wall-clock times live in
``timing`` so that repeated runs can be compared byte for byte.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import augment as aug
from . import layers as L
from .checkpoint import checkpoint_bytes, load_checkpoint
from .config import RunConfig
from .data import ImageSet, Manifest, iterate_batches, load_manifest, load_split
from .ensemble import continuous_output, to_grades, view_images
from .errors import ConfigError, DataError
from .fusion import FeatureScaler, FusionConfig, FusionModel, train_fusion
from .metrics import confusion, mean_quadratic_distance, normalize_rows, quadratic_weighted_kappa
from .objectives import compute_loss, outputs_to_grades
from .optim import OptimizerState, lr_at, sgd_step
from .plots import box_plot, line_chart
from .preprocess import NormStats, PreprocessOptions, compute_norm_stats
from .rng import Rng
from .sampling import SamplerState, class_histogram, draw_epoch

log = logging.getLogger(__name__)


# --- data -------------------------------------------------------------------

class DatasetCache:
    """Keeps preprocessed splits in memory across runs on the same data."""

    def __init__(self):
        self._sets: dict = {}

    def load(self, manifest: Manifest, split: str, options: PreprocessOptions) -> ImageSet:
        key = (str(Path(manifest.root).resolve()), manifest.digest(), split, options)
        if key not in self._sets:
            self._sets[key] = load_split(manifest, split, options)
        return self._sets[key]


def _manifest(data_root) -> Manifest:
    path = Path(data_root) / "manifest.csv"
    if not path.exists():
        raise DataError(f"no manifest.csv under {data_root}")
    return load_manifest(path)


def _zscore(images, stats: NormStats) -> np.ndarray:
    mean = np.asarray(stats.mean)[:, None, None]
    std = np.asarray(stats.std)[:, None, None]
    return (np.asarray(images) - mean) / std


def _stats_dict(stats: NormStats) -> dict:
    return {"mean": list(stats.mean), "std": list(stats.std)}


def metric_block(labels, grades) -> dict:
    """Kappa, raw and row-normalized confusion and mean quadratic distance."""
    cm = confusion(labels, grades)
    return {
        "kappa": quadratic_weighted_kappa(cm),
        "confusion": cm.tolist(),
        "normalized_confusion": normalize_rows(cm).tolist(),
        "mean_quadratic_distance": mean_quadratic_distance(cm),
        "count": int(cm.sum()),
    }


# --- training ------------------------------------------------------------------

@dataclass
class TrainedModel:
    seed: int
    params: L.ModelParams
    best_epoch: int
    best_val_kappa: float
    epochs: list = field(default_factory=list)
    seconds: float = 0.0


def train_model(config: RunConfig, seed: int, train: ImageSet, val_inputs, val_labels, stats: NormStats,
                basis=None) -> TrainedModel:
    """Train one backbone and keep the parameters of the best validation epoch.

    Ties in validation kappa keep the earlier epoch.
    """
    started = time.perf_counter()
    bcfg = config.backbone_config()
    schedule = config.schedule_spec()
    rng = Rng(seed)
    params = L.he_init(L.build_params(bcfg), rng.child("init"))
    opt = OptimizerState(schedule.lr0, config.optimizer.momentum, config.optimizer.weight_decay)
    best, best_epoch, best_kappa = params.copy(), -1, -np.inf
    records = []
    for t in range(config.epochs):
        lr = lr_at(schedule, t)
        state = SamplerState.from_spec(config.sampler, train.labels, t)
        plan = draw_epoch(state, rng.child("sampler", t), config.epoch_size)
        preds, loss_sum = [], 0.0
        batches = iterate_batches(train.images, train.labels, plan, config.batch_size, config.augmentation,
                                  rng.child("augment"), stats, epoch=t, basis=basis)
        for batch, labels, _ in batches:
            out, _, cache = L.forward(bcfg, params, batch)
            loss = compute_loss(config.loss, out, labels)
            L.backward(bcfg, params, cache, loss.grad)
            sgd_step(params, opt, lr)
            loss_sum += loss.value * len(labels)
            preds.append(outputs_to_grades(bcfg.head, out))
        train_kappa = quadratic_weighted_kappa(confusion(train.labels[plan], np.concatenate(preds)))
        val_out, _ = L.predict(bcfg, params, val_inputs)
        val_kappa = quadratic_weighted_kappa(confusion(val_labels, outputs_to_grades(bcfg.head, val_out)))
        records.append({
            "epoch": t, "lr": lr, "train_loss": loss_sum / len(plan), "train_kappa": train_kappa,
            "val_kappa": val_kappa, "sampler_histogram": class_histogram(train.labels, plan),
        })
        log.info("seed %d epoch %d lr %.5g loss %.4f train kappa %.4f val kappa %.4f",
                 seed, t, lr, loss_sum / len(plan), train_kappa, val_kappa)
        if val_kappa > best_kappa:
            best, best_epoch, best_kappa = params.copy(), t, val_kappa
    return TrainedModel(seed, best, best_epoch, float(best_kappa), records, time.perf_counter() - started)


# --- pipeline evaluation ---------------------------------------------------------

def pipeline_scores(bcfg: L.BackboneConfig, members: list[L.ModelParams], images, partners, stats: NormStats,
                    view_count: int = 1, view_rng: Rng | None = None, fusion_models=None):
    """Averaged continuous predictions over members and views.

    Returns ``(backbone_avg, fused_avg)``; ``fused_avg`` is None without fusion
    models. Fusion pairs each view of an image with the same view index of its
    partner.
    """
    view_rng = view_rng or Rng(0)
    total, fused = None, None
    for m, params in enumerate(members):
        for v in range(view_count):
            out, feats = L.predict(bcfg, params, _zscore(view_images(images, v, view_rng), stats))
            cont = continuous_output(bcfg, out)
            total = cont if total is None else total + cont
            if fusion_models is not None:
                s = fusion_models[m].scores(feats, partners)
                fused = s if fused is None else fused + s
    n = len(members) * view_count
    return total / n, (None if fused is None else fused / n)


def _view_count(config: RunConfig) -> int:
    return config.ensemble.view_count if config.ensemble.kind == "multi_view" else 1


def _fit_fusion(config: RunConfig, bcfg, params: L.ModelParams, train: ImageSet, train_inputs, seed: int):
    if bcfg.head != "regression":
        raise ConfigError("pair fusion needs a regression (score) backbone")
    before = params.checksum()
    f = config.fusion
    model = train_fusion(bcfg, params, train_inputs, train.partners, train.labels, config.fusion_config(),
                         epochs=f.epochs, batch_size=f.batch_size, lr=f.lr,
                         momentum=config.optimizer.momentum, weight_decay=config.optimizer.weight_decay, seed=seed)
    if params.checksum() != before:
        raise RuntimeError("backbone parameters changed during fusion training")
    return model


def fusion_params(model: FusionModel) -> L.ModelParams:
    """Fusion weights plus the feature scaler as one parameter set."""
    p = model.params.copy()
    p.add("scaler.mean", model.scaler.mean)
    p.add("scaler.std", model.scaler.std)
    return p


def fusion_from_params(p: L.ModelParams, cfg: FusionConfig) -> FusionModel:
    weights = L.ModelParams()
    for name in p.names():
        if name.startswith("fusion."):
            weights.add(name, p.value(name))
    return FusionModel(cfg, weights, FeatureScaler(p.value("scaler.mean"), p.value("scaler.std")))


@dataclass
class RunResult:
    report: dict
    timing: dict
    members: list[TrainedModel]
    fusion_models: list | None
    checkpoints: dict[str, bytes]
    stats: NormStats

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, data in self.checkpoints.items():
            (out / name).write_bytes(data)
        (out / "report.json").write_text(json.dumps(self.report, indent=1, sort_keys=True))
        (out / "timing.json").write_text(json.dumps(self.timing, indent=1, sort_keys=True))
        write_curves(self.report, out)
        return out


def write_curves(report: dict, out: Path) -> None:
    rows, series = [], {}
    for m in report["members"]:
        for e in m["epochs"]:
            rows.append((m["seed"], e["epoch"], e["lr"], e["train_loss"], e["train_kappa"], e["val_kappa"]))
        series[f"train s{m['seed']}"] = [e["train_kappa"] for e in m["epochs"]]
        series[f"val s{m['seed']}"] = [e["val_kappa"] for e in m["epochs"]]
    with open(out / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "epoch", "lr", "train_loss", "train_kappa", "val_kappa"])
        w.writerows(rows)
    (out / "curves.svg").write_text(line_chart(series, "training and validation kappa", "kappa"))


def run(config: RunConfig, data_root, out_dir=None, cache: DatasetCache | None = None) -> RunResult:
    """Train (and optionally fuse and ensemble) according to ``config``; evaluate on test."""
    started = time.perf_counter()
    cache = cache or DatasetCache()
    manifest = _manifest(data_root)
    options = config.preprocess_options()
    try:
        train = cache.load(manifest, "train", options)
        val = cache.load(manifest, "validation", options)
        test = cache.load(manifest, "test", options)
    except DataError as exc:
        raise DataError(f"config {config.digest()[:12]}: {exc}") from exc
    config.augmentation.check()
    stats = compute_norm_stats(train.images)
    basis = aug.fit_pca_basis(train.images) if config.augmentation.krizhevsky else None
    bcfg = config.backbone_config()
    val_inputs = _zscore(val.images, stats)
    members = [train_model(config, s, train, val_inputs, val.labels, stats, basis) for s in config.member_seeds()]

    header = {
        "kind": "backbone", "config": config.to_dict(), "config_hash": config.digest(),
        "norm_stats": _stats_dict(stats), "manifest_digest": manifest.digest(),
    }
    checkpoints, member_rows = {}, []
    for m in members:
        name = f"model_seed{m.seed}.ckpt"
        data = checkpoint_bytes(m.params, {**header, "seed": m.seed, "best_epoch": m.best_epoch,
                                           "best_val_kappa": m.best_val_kappa})
        checkpoints[name] = data
        member_rows.append({
            "seed": m.seed, "best_epoch": m.best_epoch, "best_val_kappa": m.best_val_kappa, "epochs": m.epochs,
            "checkpoint": name, "checkpoint_sha256": _sha(data),
        })

    fusion_models, fusion_block = None, None
    fusion_seconds = 0.0
    if config.fusion.enabled:
        t0 = time.perf_counter()
        train_inputs = _zscore(train.images, stats)
        fusion_models = [_fit_fusion(config, bcfg, m.params, train, train_inputs, m.seed) for m in members]
        fusion_seconds = time.perf_counter() - t0
        fusion_block = {"self_paired": {"train": int((train.partners < 0).sum()),
                                        "validation": int((val.partners < 0).sum()),
                                        "test": int((test.partners < 0).sum())},
                        "members": []}
        for m, row, fm in zip(members, member_rows, fusion_models):
            name = f"fusion_seed{m.seed}.ckpt"
            data = checkpoint_bytes(fusion_params(fm), {
                "kind": "fusion", "fusion_config": dataclasses.asdict(fm.config), "backbone": f"model_seed{m.seed}.ckpt",
                "backbone_sha256": row["checkpoint_sha256"],
                "pairing_digest": manifest.digest(), "seed": m.seed,
            })
            checkpoints[name] = data
            fusion_block["members"].append({"seed": m.seed, "loss_history": fm.history, "checkpoint": name,
                                            "checkpoint_sha256": _sha(data)})

    views = _view_count(config)
    params_list = [m.params for m in members]
    results = {}
    for split_name, ims in (("validation", val), ("test", test)):
        backbone, fused = pipeline_scores(bcfg, params_list, ims.images, ims.partners, stats, views,
                                          Rng(config.seed).child("views", split_name), fusion_models)
        results[split_name] = (metric_block(ims.labels, to_grades(bcfg, backbone)),
                               None if fused is None else metric_block(ims.labels, to_grades(bcfg, fused)))
    member_test = []
    for m in members:
        out, _ = L.predict(bcfg, m.params, _zscore(test.images, stats))
        member_test.append(quadratic_weighted_kappa(confusion(test.labels, outputs_to_grades(bcfg.head, out))))

    report = {
        "config": config.to_dict(), "config_hash": config.digest(), "manifest_digest": manifest.digest(),
        "norm_stats": _stats_dict(stats), "members": member_rows, "fusion": fusion_block,
        "test_members": member_test,
        "validation_backbone": results["validation"][0], "test_backbone": results["test"][0],
        "validation": results["validation"][1] or results["validation"][0],
        "test": results["test"][1] or results["test"][0],
    }
    timing = {"total_seconds": time.perf_counter() - started, "fusion_seconds": fusion_seconds,
              "member_seconds": [m.seconds for m in members]}
    result = RunResult(report, timing, members, fusion_models, checkpoints, stats)
    if out_dir is not None:
        result.write(out_dir)
    return result


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# --- evaluation from checkpoints --------------------------------------------------

def load_members(paths):
    """Load backbone checkpoints; all must share one backbone configuration."""
    members, headers = [], []
    for p in paths:
        params, header = load_checkpoint(p)
        if header.get("kind") != "backbone":
            raise ConfigError(f"{p}: not a backbone checkpoint")
        members.append(params)
        headers.append(header)
    if not members:
        raise ConfigError("no checkpoints given")
    configs = [RunConfig.from_dict(h["config"]) for h in headers]
    bcfg = configs[0].backbone_config()
    for p, c in zip(paths, configs):
        if c.backbone_config() != bcfg or c.preprocess_options() != configs[0].preprocess_options():
            raise ConfigError(f"{p}: checkpoint is incompatible with {paths[0]}")
    for p, params in zip(paths, members):
        expected = L.build_params(bcfg)
        if params.names() != expected.names() or any(
                params.value(n).shape != expected.value(n).shape for n in expected.names()):
            raise ConfigError(f"{p}: parameter layout does not match its configuration")
    return configs[0], members, headers


def load_fusion(path, feature_dim: int) -> FusionModel:
    params, header = load_checkpoint(path)
    if header.get("kind") != "fusion":
        raise ConfigError(f"{path}: not a fusion checkpoint")
    cfg = FusionConfig(**{**header["fusion_config"], "widths": tuple(header["fusion_config"]["widths"])})
    if cfg.feature_dim != feature_dim:
        raise ConfigError(f"{path}: fusion feature_dim {cfg.feature_dim} does not match backbone {feature_dim}")
    return fusion_from_params(params, cfg)


def evaluate(checkpoints, data_root, split: str = "test", view_count: int = 1, fusion=None, seed: int = 0,
             cache: DatasetCache | None = None) -> dict:
    """Score one or more backbone checkpoints (averaged) on a split of ``data_root``."""
    config, members, headers = load_members([Path(c) for c in checkpoints])
    bcfg = config.backbone_config()
    stats = NormStats(tuple(headers[0]["norm_stats"]["mean"]), tuple(headers[0]["norm_stats"]["std"]))
    manifest = _manifest(data_root)
    if manifest.digest() != headers[0].get("manifest_digest"):
        log.warning("evaluating on a different manifest than the one used for training")
    ims = (cache or DatasetCache()).load(manifest, split, config.preprocess_options())
    fusion_models = None
    if fusion:
        fusion = list(fusion)
        if len(fusion) != len(members):
            raise ConfigError("give one fusion checkpoint per backbone checkpoint")
        fusion_models = [load_fusion(f, bcfg.feature_dim) for f in fusion]
    backbone, fused = pipeline_scores(bcfg, members, ims.images, ims.partners, stats, view_count,
                                      Rng(seed).child("views", split), fusion_models)
    report = {
        "split": split, "checkpoints": [str(c) for c in checkpoints], "view_count": view_count,
        "config_hash": headers[0]["config_hash"], "backbone": metric_block(ims.labels, to_grades(bcfg, backbone)),
    }
    report["result"] = metric_block(ims.labels, to_grades(bcfg, fused)) if fused is not None else report["backbone"]
    if fused is not None:
        report["fusion"] = [str(f) for f in fusion]
        report["self_paired"] = int((ims.partners < 0).sum())
    return report


def fuse(checkpoint, data_root, out_dir=None, epochs: int = 20, batch_size: int = 64, lr: float = 0.02,
         seed: int | None = None, cache: DatasetCache | None = None) -> dict:
    """Train a fusion head on a saved backbone and report fused vs unfused test kappa."""
    config, members, headers = load_members([Path(checkpoint)])
    config = config.replace(**{"fusion.enabled": True, "fusion.epochs": epochs, "fusion.batch_size": batch_size,
                               "fusion.lr": lr})
    bcfg = config.backbone_config()
    stats = NormStats(tuple(headers[0]["norm_stats"]["mean"]), tuple(headers[0]["norm_stats"]["std"]))
    cache = cache or DatasetCache()
    manifest = _manifest(data_root)
    train = cache.load(manifest, "train", config.preprocess_options())
    test = cache.load(manifest, "test", config.preprocess_options())
    seed = headers[0].get("seed", 0) if seed is None else seed
    model = _fit_fusion(config, bcfg, members[0], train, _zscore(train.images, stats), seed)
    backbone, fused = pipeline_scores(bcfg, members, test.images, test.partners, stats, 1, None, [model])
    data = checkpoint_bytes(fusion_params(model), {
        "kind": "fusion", "fusion_config": dataclasses.asdict(model.config), "backbone": str(checkpoint),
        "backbone_sha256": _sha(Path(checkpoint).read_bytes()), "pairing_digest": manifest.digest(), "seed": seed,
    })
    report = {
        "checkpoint": str(checkpoint), "fusion_sha256": _sha(data), "loss_history": model.history,
        "self_paired_train": int((train.partners < 0).sum()),
        "test_backbone": metric_block(test.labels, to_grades(bcfg, backbone)),
        "test": metric_block(test.labels, to_grades(bcfg, fused)),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"fusion_seed{seed}.ckpt").write_bytes(data)
        (out / "fusion_report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    return report


# --- ablation -------------------------------------------------------------------------

STACK_COLUMNS = ("HR", "MSE", "CD", "DA", "PFF", "ENS")


def ablate(entries, data_root, out_dir=None, seeds=None, cache: DatasetCache | None = None) -> dict:
    """Run each ``(name, config[, flags])`` entry and tabulate test kappa.

    With ``seeds`` every entry is repeated per seed and the row kappa is the
    mean. ``delta`` is the row's kappa minus the previous row's, in
    percentage points (first row 0).
    """
    cache = cache or DatasetCache()
    rows = []
    for entry in entries:
        name, config = entry[0], entry[1]
        flags = entry[2] if len(entry) > 2 else {}
        run_seeds = list(seeds) if seeds else [config.seed]
        test_k, val_k = [], []
        for s in run_seeds:
            cfg = config if s == config.seed else config.replace(seed=s, **_member_shift(config, s))
            res = run(cfg, data_root, None if out_dir is None else Path(out_dir) / f"{name}_seed{s}", cache)
            test_k.append(res.report["test"]["kappa"])
            val_k.append(res.report["validation"]["kappa"])
        rows.append({"name": name, "flags": flags, "config_hash": config.digest(), "seeds": run_seeds,
                     "test_kappas": test_k, "val_kappas": val_k,
                     "test_kappa": float(np.mean(test_k)), "val_kappa": float(np.mean(val_k))})
    for i, row in enumerate(rows):
        row["delta"] = 0.0 if i == 0 else 100.0 * (row["test_kappa"] - rows[i - 1]["test_kappa"])
    table = {"rows": rows}
    if out_dir is not None:
        write_table(table, Path(out_dir))
    return table


def _member_shift(config: RunConfig, seed: int) -> dict:
    if config.ensemble.kind != "multi_model":
        return {}
    offset = seed - config.seed
    return {"ensemble.seeds": [s + offset for s in config.ensemble.seeds]}


def write_table(table: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    rows = table["rows"]
    flag_names = [c for c in STACK_COLUMNS if any(c in r["flags"] for r in rows)]
    (out / "ablation.json").write_text(json.dumps(table, indent=1, sort_keys=True))
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", *flag_names, "val_kappa", "test_kappa", "delta_pct"])
        for r in rows:
            marks = ["x" if r["flags"].get(c) else "" for c in flag_names]
            w.writerow([r["name"], *marks, f"{r['val_kappa']:.6f}", f"{r['test_kappa']:.6f}", f"{r['delta']:.4f}"])
    (out / "ablation_box.svg").write_text(box_plot({r["name"]: r["test_kappas"] for r in rows},
                                                   "test kappa per configuration"))
