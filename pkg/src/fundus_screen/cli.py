"""Command line interface.

    fundus-screen fixture   --out-dir DIR [--n-per-class N] [--seed S]
    fundus-screen prepare   --experiment baseline --data-dir DIR [--out-dir DIR]
    fundus-screen train     --experiment vgg16 --data-dir DIR --out-dir RUN [--weights W]
    fundus-screen evaluate  --run-dir RUN --split test | --predictions CSV
    fundus-screen threshold --run-dir RUN | --predictions CSV --policy min_recall=0.9
    fundus-screen report    --run-dir RUN
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import DATA_DIR_ENV, PRESET_NAMES, ConfigError, ExperimentConfig, parse_config, preset
from .dataset import SPLIT_NAMES, generate_fixture_dataset, summarize_split, write_manifest
from .metrics import (
    UNDEFINED,
    MetricsReport,
    Policy,
    class_scores,
    format_report,
    format_value,
    select_threshold,
    sweep_row,
    threshold_sweep,
)
from .models import load_exported
from .trainer import TrainHistory, load_split_images, predict_images
from .pipeline import (
    RunError,
    RunManifest,
    atomic_write_text,
    dump_json,
    load_splits,
    metrics_for,
    predictions_csv,
    read_predictions,
    run_experiment,
    write_evaluation,
)
from . import plotting

log = logging.getLogger("fundus_screen")


class CliError(RuntimeError):
    pass


def _resolve_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = parse_config(args.config)
        if args.experiment and args.experiment != cfg.preset:
            raise ConfigError(f"--experiment {args.experiment} conflicts with config preset {cfg.preset}")
    elif getattr(args, "experiment", None):
        cfg = preset(args.experiment)
    else:
        raise CliError("give --config PATH or --experiment {baseline,vgg16}")
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "weights", None):
        changes["weights_path"] = str(args.weights)
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    return cfg.replace(**changes) if changes else cfg


def _data_dir(args) -> Path:
    data_dir = args.data_dir or os.environ.get(DATA_DIR_ENV)
    if not data_dir:
        raise CliError(f"no data directory: pass --data-dir or set {DATA_DIR_ENV}")
    return Path(data_dir)


# --------------------------------------------------------------------------
# commands


def cmd_fixture(args) -> int:
    splits = generate_fixture_dataset(
        args.out_dir, args.n_per_class, args.image_size, args.seed, args.eval_n_per_class
    )
    for name, split in splits.items():
        print(f"{name:<10} {len(split):>4} images  counts {split.class_counts[0]}/{split.class_counts[1]}")
    return 0


def cmd_prepare(args) -> int:
    cfg = _resolve_config(args)
    data_dir = _data_dir(args)
    splits = load_splits(cfg, data_dir)
    print(f"{'split':<10} {'n':>5} {'normal':>7} {'disease':>8}  imbalance")
    for name, split in splits.items():
        s = summarize_split(split)
        ratio = f"{s.imbalance_ratio:.3f}" if s.ratio_defined else "undefined (single class)"
        print(f"{name:<10} {s.total:>5} {s.counts[0]:>7} {s.counts[1]:>8}  {ratio}")
        if args.out_dir:
            write_manifest(split, Path(args.out_dir) / f"{name}.csv", data_dir)
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    data_dir = _data_dir(args)
    if not args.out_dir:
        raise CliError("train needs --out-dir")
    _, history, report = run_experiment(cfg, data_dir, args.out_dir, force=args.force)
    print(f"trained {cfg.experiment} for {len(history)} epochs -> {args.out_dir}")
    val = json.loads((Path(args.out_dir) / "metrics_validation.json").read_text())
    acc = UNDEFINED if val["accuracy"] is None else val["accuracy"]
    print(f"validation accuracy {format_value(acc)}")
    print(format_report(report, title="test split"))
    return 0


def cmd_evaluate(args) -> int:
    threshold = args.threshold
    if args.predictions:
        _, labels, scores = read_predictions(args.predictions)
        split_name = args.split or "test"
        out = Path(args.out_dir) if args.out_dir else None
    else:
        if not args.run_dir:
            raise CliError("evaluate needs --run-dir or --predictions")
        run_dir = Path(args.run_dir)
        cfg = parse_config(run_dir / "config.snapshot")
        split_name = args.split or "test"
        data_dir = _data_dir(args)
        split = load_splits(cfg, data_dir, names=[split_name])[split_name]
        model = load_exported(run_dir / "model.pt")
        scores = predict_images(model, load_split_images(split, model.spec.input_size), cfg.batch_size)
        if scores.ndim == 1:
            scores = np.column_stack([1.0 - scores, scores])
        labels = split.labels
        out = Path(args.out_dir) if args.out_dir else run_dir / f"eval_{split_name}"
        if threshold is None:
            threshold = cfg.threshold
        atomic_write_text(out / f"predictions_{split_name}.csv", predictions_csv(split, scores))
    if threshold is None:
        threshold = 0.5

    if out is not None:
        report, _ = write_evaluation(out, split_name, labels, scores, threshold, "metrics.json")
    else:
        report = metrics_for(labels, scores, threshold, split_name)
    print(format_report(report, title=f"{split_name} split"))
    return 0


def _sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "precision", "recall", "f1", "accuracy", "youden_j"])
    for r in rows:
        w.writerow([repr(v) for v in (r.threshold, r.precision, r.recall, r.f1, r.accuracy, r.youden_j)])
    return buf.getvalue()


def cmd_threshold(args) -> int:
    if args.predictions:
        path = Path(args.predictions)
    elif args.run_dir:
        path = Path(args.run_dir) / f"predictions_{args.split or 'validation'}.csv"
    else:
        raise CliError("threshold needs --run-dir or --predictions")
    _, labels, scores = read_predictions(path)
    s1 = class_scores(scores, 1)
    policy = Policy.parse(args.policy)
    rows = threshold_sweep(labels, s1)
    chosen = select_threshold(rows, policy)
    row = sweep_row(labels, s1, chosen)
    print(f"policy     {policy}")
    print(f"threshold  {chosen!r}")
    print(f"recall(1)  {format_value(row.recall, 4)}")
    print(f"precision(1) {format_value(row.precision, 4)}")
    print(f"accuracy   {format_value(row.accuracy, 4)}")
    print(f"youden J   {format_value(row.youden_j, 4)}")
    if args.out_dir:
        out = Path(args.out_dir)
        atomic_write_text(out / "threshold_sweep.csv", _sweep_csv(rows))
        atomic_write_text(
            out / "threshold.json",
            dump_json(
                {
                    "policy": str(policy),
                    "source": str(path),
                    "threshold": chosen if np.isfinite(chosen) else None,
                    "recall": row.recall,
                    "precision": None if np.isnan(row.precision) else row.precision,
                    "accuracy": row.accuracy,
                    "youden_j": row.youden_j,
                }
            ),
        )
        plotting.plot_threshold_sweep(
            [r.threshold for r in rows], [r.recall for r in rows], [r.precision for r in rows],
            out / "threshold_sweep.png", chosen,
        )
    return 0


def _read_roc(path: Path) -> tuple[np.ndarray, np.ndarray]:
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["fpr"]) for r in rows]), np.array([float(r["tpr"]) for r in rows])


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    metrics_path = run_dir / "metrics.json"
    if not metrics_path.is_file():
        raise CliError(f"{run_dir} has no metrics.json")
    report = MetricsReport.from_dict(json.loads(metrics_path.read_text(encoding="utf-8")))
    out = Path(args.out_dir) if args.out_dir else run_dir
    lines = []
    manifest_path = run_dir / "run_manifest.json"
    if manifest_path.is_file():
        manifest = RunManifest.load(run_dir)
        lines.append(f"experiment    {manifest.experiment}  (seed {manifest.seed}, status {manifest.status})")
        if manifest.untrained_backbone:
            lines.append("note          backbone weights were NOT pretrained (untrained backbone)")
    val_path = run_dir / "metrics_validation.json"
    if val_path.is_file():
        val = json.loads(val_path.read_text(encoding="utf-8"))
        acc = UNDEFINED if val["accuracy"] is None else val["accuracy"]
        lines.append(f"validation accuracy {format_value(acc)}")
    lines.append(format_report(report, title=f"{report.extra.get('split', 'test')} split"))

    curves = {}
    for c in (0, 1):
        roc_path = run_dir / f"roc_class{c}.csv"
        if roc_path.is_file():
            fpr, tpr = _read_roc(roc_path)
            area = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
            curves[c] = (fpr, tpr, area)
    figures = []
    if curves:
        figures.append(plotting.plot_roc(curves, out / "roc.png"))
    figures.append(plotting.plot_confusion_matrix(report.confusion.to_list(), out / "confusion_matrix.png"))
    history_path = run_dir / "history.csv"
    if history_path.is_file():
        h = TrainHistory.from_csv(history_path.read_text(encoding="utf-8"))
        figures.append(
            plotting.plot_history(
                {"train_loss": h.train_loss, "val_loss": h.val_loss, "train_acc": h.train_acc, "val_acc": h.val_acc},
                out / "history.png",
            )
        )
    text = "\n".join(lines) + "\n"
    atomic_write_text(out / "report.txt", text)
    print(text, end="")
    for f in figures:
        print(f"wrote {f}")
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fundus-screen", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def config_flags(sp):
        sp.add_argument("--config", type=Path)
        sp.add_argument("--experiment", choices=PRESET_NAMES)
        sp.add_argument("--data-dir", type=Path, help=f"defaults to ${DATA_DIR_ENV}")

    sp = sub.add_parser("fixture", help="write a synthetic separable dataset")
    sp.add_argument("--out-dir", type=Path, required=True)
    sp.add_argument("--n-per-class", type=int, default=8)
    sp.add_argument("--eval-n-per-class", type=int, default=None)
    sp.add_argument("--image-size", type=int, default=64)
    sp.add_argument("--seed", type=int, default=1)
    sp.set_defaults(func=cmd_fixture)

    sp = sub.add_parser("prepare", help="build and verify split manifests")
    config_flags(sp)
    sp.add_argument("--out-dir", type=Path)
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train", help="train and evaluate one experiment")
    config_flags(sp)
    sp.add_argument("--out-dir", type=Path)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--weights", type=Path, help="VGG16 state dict (torchvision layout)")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="metrics for an exported model or stored predictions")
    sp.add_argument("--run-dir", type=Path)
    sp.add_argument("--predictions", type=Path)
    sp.add_argument("--data-dir", type=Path)
    sp.add_argument("--split", choices=SPLIT_NAMES)
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--out-dir", type=Path)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("threshold", help="sweep thresholds and pick one by policy")
    sp.add_argument("--run-dir", type=Path)
    sp.add_argument("--predictions", type=Path)
    sp.add_argument("--split", choices=SPLIT_NAMES)
    sp.add_argument("--policy", default="youden", help="youden or min_recall=R")
    sp.add_argument("--out-dir", type=Path)
    sp.set_defaults(func=cmd_threshold)

    sp = sub.add_parser("report", help="render text report and figures from a run directory")
    sp.add_argument("--run-dir", type=Path, required=True)
    sp.add_argument("--out-dir", type=Path)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (CliError, ConfigError, RunError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
