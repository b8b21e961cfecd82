"""Command-line entry point: ``drkit <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .augment import AUGMENTATION_PRESETS
from .config import RunConfig, load_config, save_config
from .data import (
    Manifest,
    SyntheticSpec,
    generate_synthetic,
    load_manifest,
    read_image,
    write_image,
    write_manifest,
)
from .errors import DrkitError
from .harness import DatasetCache, ablate, evaluate, fuse, run, write_curves
from .objectives import CLASSIFICATION_LOSSES, REGRESSION_LOSSES
from .optim import SCHEDULE_KINDS
from .plots import box_plot
from .preprocess import ENHANCEMENTS, PreprocessOptions, preprocess_raw
from .presets import PRESETS, build_preset
from .sampling import SAMPLER_KINDS


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML run config; flags below override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--loss", choices=CLASSIFICATION_LOSSES + REGRESSION_LOSSES)
    p.add_argument("--schedule", choices=SCHEDULE_KINDS)
    p.add_argument("--lr", type=float, help="initial learning rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epoch-size", type=int)
    p.add_argument("--sampler", choices=SAMPLER_KINDS)
    p.add_argument("--augment", choices=sorted(AUGMENTATION_PRESETS))
    p.add_argument("--enhance", choices=ENHANCEMENTS)
    p.add_argument("--fusion", action="store_true", help="train the paired-eye fusion head")
    p.add_argument("--ensemble-seeds", type=int, nargs="+", help="multi-model ensemble member seeds")
    p.add_argument("--views", type=int, help="multi-view test-time augmentation view count")


def config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    simple = {"seed": "seed", "resolution": "resolution", "loss": "loss.kind", "schedule": "schedule.kind",
              "lr": "schedule.lr0", "epochs": "epochs", "batch_size": "batch_size", "epoch_size": "epoch_size",
              "sampler": "sampler.kind", "enhance": "preprocess.enhance"}
    for attr, path in simple.items():
        if getattr(args, attr, None) is not None:
            changes[path] = getattr(args, attr)
    if getattr(args, "augment", None):
        changes["augmentation"] = AUGMENTATION_PRESETS[args.augment]
    if getattr(args, "fusion", False):
        changes["fusion.enabled"] = True
    if getattr(args, "ensemble_seeds", None):
        changes.update({"ensemble.kind": "multi_model", "ensemble.seeds": args.ensemble_seeds})
    if getattr(args, "views", None):
        changes.update({"ensemble.kind": "multi_view", "ensemble.view_count": args.views})
    return cfg.replace(**changes) if changes else cfg


def cmd_generate(args) -> dict:
    spec = SyntheticSpec(image_side=args.side, split_sizes=(args.train, args.val, args.test),
                         pair_grade_jitter=args.jitter, lesion_radius=args.lesion_radius,
                         corrupt_fraction=args.corrupt_fraction, seed=args.seed)
    manifest, _ = generate_synthetic(spec, args.out)
    return {"out": str(args.out), "images": len(manifest), "manifest": str(Path(args.out) / "manifest.csv")}


def cmd_preprocess(args) -> dict:
    manifest = load_manifest(Path(args.data) / "manifest.csv")
    options = PreprocessOptions(resolution=args.resolution, enhance=args.enhance)
    out = Path(args.out)
    kept = [s for s in manifest if not args.split or s.split == args.split]
    for s in kept:
        img = preprocess_raw(read_image(manifest.path_of(s)), options)
        (out / s.image).parent.mkdir(parents=True, exist_ok=True)
        write_image(out / s.image, np.rint(img * 255.0))
    write_manifest(Manifest(kept, out), out / "manifest.csv")
    return {"out": str(out), "images": len(kept)}


def cmd_train(args) -> dict:
    cfg = config_from_args(args)
    out = Path(args.out)
    result = run(cfg, args.data, out)
    save_config(cfg, out / "config.yaml")
    rep = result.report
    return {"out": str(out), "config_hash": rep["config_hash"], "test_kappa": rep["test"]["kappa"],
            "validation_kappa": rep["validation"]["kappa"],
            "best_epochs": [m["best_epoch"] for m in rep["members"]]}


def cmd_evaluate(args) -> dict:
    report = evaluate(args.checkpoint, args.data, split=args.split, view_count=args.views,
                      fusion=args.fusion, seed=args.seed)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(report, indent=1, sort_keys=True))
    return {"split": args.split, "kappa": report["result"]["kappa"],
            "normalized_confusion": report["result"]["normalized_confusion"]}


def cmd_ablate(args) -> dict:
    if args.preset:
        entries = build_preset(args.preset, config_from_args(args))
    elif args.configs:
        entries = [(Path(c).stem, load_config(c), {}) for c in args.configs]
    else:
        raise DrkitError("ablate needs --preset or --configs")
    table = ablate(entries, args.data, args.out, seeds=args.seeds, cache=DatasetCache())
    return {"out": str(args.out), "rows": [{k: r[k] for k in ("name", "test_kappa", "delta")} for r in table["rows"]]}


def cmd_fuse(args) -> dict:
    rep = fuse(args.checkpoint, args.data, args.out, epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
               seed=args.seed)
    return {"test_backbone_kappa": rep["test_backbone"]["kappa"], "test_fused_kappa": rep["test"]["kappa"]}


def cmd_report(args) -> dict:
    run_dir = Path(args.run)
    if (run_dir / "ablation.json").exists():
        table = json.loads((run_dir / "ablation.json").read_text())
        (run_dir / "ablation_box.svg").write_text(
            box_plot({r["name"]: r["test_kappas"] for r in table["rows"]}, "test kappa per configuration"))
        return {"rows": [{k: r[k] for k in ("name", "test_kappa", "delta")} for r in table["rows"]]}
    report_path = run_dir / "report.json"
    if not report_path.exists():
        raise DrkitError(f"no report.json or ablation.json in {run_dir}")
    rep = json.loads(report_path.read_text())
    write_curves(rep, run_dir)
    return {"config_hash": rep["config_hash"], "test_kappa": rep["test"]["kappa"],
            "validation_kappa": rep["validation"]["kappa"],
            "test_normalized_confusion": rep["test"]["normalized_confusion"],
            "members": [{"seed": m["seed"], "best_epoch": m["best_epoch"], "best_val_kappa": m["best_val_kappa"]}
                        for m in rep["members"]]}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drkit", description="Diabetic retinopathy grading training kit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic paired-eye dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--side", type=int, default=64)
    p.add_argument("--train", type=int, default=2000)
    p.add_argument("--val", type=int, default=500)
    p.add_argument("--test", type=int, default=500)
    p.add_argument("--jitter", type=float, default=0.04, help="share of pairs whose grades differ by one")
    p.add_argument("--lesion-radius", type=float, default=1.3)
    p.add_argument("--corrupt-fraction", type=float, default=0.0, help="share of images blurred")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("preprocess", help="write preprocessed copies of the images")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--enhance", choices=ENHANCEMENTS, default="none")
    p.add_argument("--split")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model and write its report")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score checkpoints on a split")
    p.add_argument("--checkpoint", required=True, nargs="+", type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--split", default="test", choices=("train", "validation", "test"))
    p.add_argument("--views", type=int, default=1)
    p.add_argument("--fusion", nargs="+", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, help="write the full JSON report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run an experiment matrix and tabulate kappa deltas")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--configs", nargs="+", type=Path)
    p.add_argument("--seeds", type=int, nargs="+")
    _add_run_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("fuse", help="train the paired-eye fusion head on a saved backbone")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("report", help="summarize a run or ablation directory and redraw its plots")
    p.add_argument("--run", required=True, type=Path)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        result = args.func(args)
    except (DrkitError, ValueError, OSError, KeyError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(record), file=sys.stderr)
        return 2
    print(json.dumps(result, indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
