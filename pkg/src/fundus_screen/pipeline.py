"""End-to-end runs: manifests, training, evaluation and the run directory.

Run directory layout::

    run_manifest.json   status, seed, checksums, artifact paths
    config.snapshot     YAML, readable by parse_config
    history.csv         epoch,train_loss,train_acc,val_loss,val_acc
    model.pt            exported model
    metrics.json        test split
    metrics_validation.json
    predictions_<split>.csv   id,label,score_0,score_1
    roc_class0.csv, roc_class1.csv   threshold,fpr,tpr (test split)
    manifests/<split>.csv     id,relative_path,label
"""
from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import logging
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import ExperimentConfig, dump_config
from .dataset import SPLIT_NAMES, DatasetSplit, build_manifest, load_label_table, split_checksum, write_manifest
from .metrics import MetricsReport, evaluate_scores, roc_curve
from .models import ScreeningModel, export_model, instantiate, spec_by_name
from .trainer import TrainConfig, TrainHistory, diseased_scores, load_split_images, predict_images, train

log = logging.getLogger(__name__)

MANIFEST_FILE = "run_manifest.json"


class RunError(RuntimeError):
    pass


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n"


@dataclass
class RunManifest:
    experiment: str
    seed: int
    config_snapshot: str = "config.snapshot"
    status: str = "incomplete"
    dataset_checksums: dict[str, str] = field(default_factory=dict)
    weights_sha256: str | None = None
    untrained_backbone: bool = False
    artifacts: dict[str, str] = field(default_factory=dict)
    started_at: str = ""
    finished_at: str | None = None
    error: str | None = None
    package_version: str = __version__

    def save(self, run_dir: Path) -> None:
        atomic_write_text(run_dir / MANIFEST_FILE, dump_json(asdict(self)))

    @classmethod
    def load(cls, run_dir: str | os.PathLike) -> "RunManifest":
        path = Path(run_dir) / MANIFEST_FILE
        if not path.is_file():
            raise RunError(f"{run_dir} has no {MANIFEST_FILE}")
        return cls(**json.loads(path.read_text(encoding="utf-8")))


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def prepare_run_dir(out_dir: str | os.PathLike, force: bool = False) -> Path:
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise RunError(f"output directory {out} already exists and is not empty (use --force)")
        if not (out / MANIFEST_FILE).is_file():
            raise RunError(f"refusing to overwrite {out}: it does not look like a run directory")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_splits(cfg: ExperimentConfig, data_dir: str | os.PathLike, names=SPLIT_NAMES) -> dict[str, DatasetSplit]:
    data_dir = Path(data_dir)
    layout = cfg.data
    splits = {}
    for name in names:
        src = layout.splits[name]
        table = load_label_table(data_dir / src.labels, layout.id_column, layout.label_column)
        splits[name] = build_manifest(table, data_dir / src.images, name, layout.filename_template)
    return splits


def predictions_csv(split: DatasetSplit, scores: np.ndarray) -> str:
    s1 = diseased_scores(scores)
    s0 = 1.0 - s1 if scores.ndim == 1 else scores[:, 0]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "label", "score_0", "score_1"])
    for r, a, b in zip(split.records, s0.tolist(), s1.tolist()):
        w.writerow([r.id, r.label, repr(a), repr(b)])
    return buf.getvalue()


def read_predictions(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns ids, labels and an ``(n, 2)`` score array."""
    ids, labels, scores = [], [], []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        needed = {"label", "score_1"}
        if not needed <= set(reader.fieldnames or []):
            raise RunError(f"{path}: predictions need columns label and score_1 (score_0 optional)")
        for line_no, row in enumerate(reader, start=2):
            try:
                s1 = float(row["score_1"])
                s0 = float(row["score_0"]) if row.get("score_0") not in (None, "") else 1.0 - s1
                labels.append(int(row["label"]))
                ids.append(int(row["id"]) if row.get("id") not in (None, "") else line_no - 1)
            except ValueError as exc:
                raise RunError(f"{path}:{line_no}: {exc}") from None
            scores.append((s0, s1))
    if not labels:
        raise RunError(f"{path}: no predictions")
    return np.array(ids), np.array(labels, dtype=np.int64), np.array(scores, dtype=np.float64)


def roc_csv(y_true, scores, positive_class: int) -> str:
    curve = roc_curve(y_true, scores, positive_class)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "fpr", "tpr"])
    for t, fpr, tpr in curve.points():
        w.writerow([repr(t), repr(fpr), repr(tpr)])
    return buf.getvalue()


def metrics_for(labels: np.ndarray, scores: np.ndarray, threshold: float, split_name: str) -> MetricsReport:
    report = evaluate_scores(labels, scores, threshold)
    report.extra["split"] = split_name
    return report


def write_evaluation(
    out: Path, split_name: str, labels: np.ndarray, scores: np.ndarray, threshold: float, metrics_name: str
) -> tuple[MetricsReport, dict[str, str]]:
    """metrics json plus (when both classes are present) per-class ROC CSVs."""
    report = metrics_for(labels, scores, threshold, split_name)
    written = {metrics_name: metrics_name}
    atomic_write_text(out / metrics_name, dump_json(report.to_dict()))
    if 0 < labels.sum() < labels.size:
        suffix = "" if split_name == "test" else f"_{split_name}"
        for c in (0, 1):
            name = f"roc_class{c}{suffix}.csv"
            atomic_write_text(out / name, roc_csv(labels, scores, c))
            written[name] = name
    else:
        log.warning("split %s holds a single class; ROC curves not written", split_name)
    return report, written


def run_experiment(
    cfg: ExperimentConfig,
    data_dir: str | os.PathLike,
    out_dir: str | os.PathLike,
    force: bool = False,
) -> tuple[ScreeningModel, TrainHistory, MetricsReport]:
    if cfg.single_threaded:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    out = prepare_run_dir(out_dir, force)
    manifest = RunManifest(experiment=cfg.experiment, seed=cfg.seed, started_at=_now())
    manifest.save(out)
    try:
        atomic_write_text(out / "config.snapshot", dump_config(cfg))
        splits = load_splits(cfg, data_dir)
        for name, split in splits.items():
            write_manifest(split, out / "manifests" / f"{name}.csv", data_dir)
            manifest.dataset_checksums[name] = split_checksum(split)
        manifest.save(out)

        model = instantiate(spec_by_name(cfg.experiment), cfg.seed, cfg.weights_path)
        manifest.weights_sha256 = model.weights_sha256
        manifest.untrained_backbone = model.untrained_backbone
        size = model.spec.input_size
        images = {name: load_split_images(split, size) for name, split in splits.items()}
        model, history = train(
            model, splits["train"], splits["validation"], TrainConfig.from_experiment(cfg),
            images["train"], images["validation"],
        )
        atomic_write_text(out / "history.csv", history.to_csv())
        export_model(model, out / "model.pt", cfg.seed)
        manifest.artifacts.update({"history": "history.csv", "model": "model.pt"})

        report = None
        for name, metrics_name in (("validation", "metrics_validation.json"), ("test", "metrics.json")):
            scores = predict_images(model, images[name], cfg.batch_size)
            atomic_write_text(out / f"predictions_{name}.csv", predictions_csv(splits[name], scores))
            manifest.artifacts[f"predictions_{name}"] = f"predictions_{name}.csv"
            rep, written = write_evaluation(out, name, splits[name].labels, scores, cfg.threshold, metrics_name)
            manifest.artifacts.update(written)
            if name == "test":
                report = rep
        manifest.status = "complete"
        manifest.finished_at = _now()
        manifest.save(out)
        return model, history, report
    except BaseException as exc:
        manifest.status = "incomplete"
        manifest.error = f"{type(exc).__name__}: {exc}"
        manifest.save(out)
        raise
