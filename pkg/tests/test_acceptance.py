"""Exit criteria for the build. Each test carries a ``criterion`` marker; the
conftest prints one PASS/FAIL line per criterion after the run."""
import json
import os
import random
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
import torch

from fundus_screen.cli import main
from fundus_screen.config import DATA_DIR_ENV, preset
from fundus_screen.metrics import (
    ConfusionMatrix,
    accuracy,
    auc,
    auc_pairwise_oracle,
    f1,
    precision,
    recall,
    roc_curve,
    weighted_f1,
)
from fundus_screen.models import (
    baseline_cnn_spec,
    instantiate,
    parameter_counts,
    transfer_head_spec,
)
from fundus_screen.pipeline import load_splits, run_experiment
from fundus_screen.preprocess import (
    AugmentConfig,
    Image,
    augment,
    flip_horizontal,
    flip_vertical,
    rescale,
    resize,
)
from fundus_screen.trainer import TrainConfig, class_weight_fractions, compute_class_weights, train


def _f1(p: Fraction, r: Fraction) -> Fraction:
    return 2 * p * r / (p + r)


@pytest.mark.criterion(1, "metric oracle vs reported confusion matrix")
def test_metric_oracle_vs_reported():
    start = time.perf_counter()
    cm = ConfusionMatrix(((494, 12), (47, 87)))
    p0, r0 = Fraction(494, 541), Fraction(494, 506)
    p1, r1 = Fraction(87, 99), Fraction(87, 134)
    exact = {
        "accuracy": (accuracy(cm), Fraction(581, 640)),
        "precision0": (precision(cm, 0), p0),
        "recall0": (recall(cm, 0), r0),
        "f1_0": (f1(cm, 0), _f1(p0, r0)),
        "precision1": (precision(cm, 1), p1),
        "recall1": (recall(cm, 1), r1),
        "f1_1": (f1(cm, 1), _f1(p1, r1)),
        "weighted_f1": (weighted_f1(cm), Fraction(506, 640) * _f1(p0, r0) + Fraction(134, 640) * _f1(p1, r1)),
    }
    for name, (got, want) in exact.items():
        assert got == pytest.approx(float(want), abs=1e-15), name

    reported = {
        "precision0": 0.91, "recall0": 0.98, "f1_0": 0.94,
        "precision1": 0.88, "recall1": 0.65, "f1_1": 0.75,
        "weighted_f1": 0.90,
    }
    for name, value in reported.items():
        assert round(exact[name][0], 2) == value, name
    assert round(accuracy(cm), 3) == 0.908
    assert time.perf_counter() - start < 1.0


@pytest.mark.criterion(2, "trapezoidal AUC equals pairwise oracle (100 instances, ties)")
def test_auc_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    done = 0
    while done < 100:
        n = int(rng.integers(2, 501))
        y = rng.integers(0, 2, n)
        if y.sum() in (0, n):
            continue
        # coarse levels guarantee plenty of tied scores
        levels = int(rng.integers(2, 30))
        s = rng.integers(0, levels, n) / levels
        if done % 3 == 0:
            s = np.where(rng.random(n) < 0.5, s, rng.random(n))
        assert abs(auc(roc_curve(y, s)) - auc_pairwise_oracle(y, s)) <= 1e-9
        done += 1
    assert time.perf_counter() - start < 10.0


@pytest.mark.criterion(3, "per-class AUCs equal for softmax pairs")
def test_binary_auc_symmetry():
    rng = np.random.default_rng(7)
    for trial in range(100):
        n = int(rng.integers(10, 400))
        y = rng.integers(0, 2, n)
        if y.sum() in (0, n):
            continue
        logits = rng.normal(size=(n, 2))
        if trial % 2:
            logits = np.round(logits, 1)  # ties
        pairs = torch.softmax(torch.from_numpy(logits), dim=1).numpy()
        a1 = auc(roc_curve(y, pairs, positive_class=1))
        a0 = auc(roc_curve(y, pairs, positive_class=0))
        assert abs(a0 - a1) <= 1e-12


@pytest.mark.criterion(4, "architecture contracts and parameter counts")
def test_architecture_contracts():
    spec = baseline_cnn_spec()
    assert [(l.kind, l.units, l.activation) for l in spec.layers] == [
        ("conv2d", 32, "relu"), ("maxpool", 0, "none"), ("conv2d", 64, "relu"), ("maxpool", 0, "none"),
        ("flatten", 0, "none"), ("dense", 128, "relu"), ("dense", 1, "sigmoid"),
    ]
    # shape propagation by hand: 64 -> 62 -> 31 -> 29 -> 14
    side = ((64 - 2) // 2 - 2) // 2
    baseline_total = (27 * 32 + 32) + (9 * 32 * 64 + 64) + (side * side * 64 * 128 + 128) + (128 + 1)
    assert baseline_total == 1_625_281
    counts = parameter_counts(instantiate(spec, 0))
    assert (counts.trainable, counts.frozen) == (baseline_total, 0)

    side = 254
    for _ in range(5):
        side //= 2
    flat = side * side * 512
    head = (flat * 500 + 500) + (500 * 100 + 100) + (100 * 2 + 2)
    convs = [3, 64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512]
    frozen = sum(9 * a * b + b for a, b in zip(convs, convs[1:]))
    assert (flat, head, frozen) == (25088, 12_594_802, 14_714_688)
    model = instantiate(transfer_head_spec(), 0)
    counts = parameter_counts(model)
    assert (counts.trainable, counts.frozen) == (head, frozen)
    assert all(not p.requires_grad for p in model.backbone.parameters())


@pytest.mark.criterion(5, "frozen backbone bit-identical after 2 training epochs")
def test_freeze_invariance(fixture_data):
    _, splits = fixture_data
    model = instantiate(transfer_head_spec(), 11)
    before = {k: v.clone() for k, v in model.backbone.state_dict().items()}
    head_before = [p.clone() for p in model.body.parameters()]
    cfg = TrainConfig.from_experiment(preset("vgg16").replace(epochs=2, seed=11))
    _, history = train(model, splits["train"], splits["validation"], cfg)
    assert len(history) == 2
    after = model.backbone.state_dict()
    assert before.keys() == after.keys()
    for k in before:
        assert torch.equal(before[k], after[k]), k
    assert any(not torch.equal(a, b) for a, b in zip(head_before, model.body.parameters()))


@pytest.mark.criterion(6, "baseline overfits 16-image fixture (>= 0.95 train acc, 50 epochs, < 2 min)")
def test_tiny_overfit(fixture_data):
    _, splits = fixture_data
    start = time.perf_counter()
    model = instantiate(baseline_cnn_spec(), 0)
    cfg = TrainConfig.from_experiment(preset("baseline").replace(epochs=50))
    _, history = train(model, splits["train"], splits["validation"], cfg)
    elapsed = time.perf_counter() - start
    assert max(history.train_acc) >= 0.95
    assert elapsed < 120.0


@pytest.mark.criterion(7, "identical seeds give byte-identical metrics.json and history.csv")
def test_determinism(fixture_data, tmp_path):
    root, _ = fixture_data
    cfg = preset("baseline").replace(epochs=5, seed=42)
    run_experiment(cfg, root, tmp_path / "a")
    run_experiment(cfg, root, tmp_path / "b")
    for name in ("metrics.json", "history.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


@pytest.mark.criterion(8, "preprocessing properties over >= 100 random images")
def test_preprocessing_properties():
    rng = np.random.default_rng(8)
    off = AugmentConfig()
    for _ in range(120):
        h, w = rng.integers(1, 40, 2)
        img = Image(rng.integers(0, 256, (h, w, 3), dtype=np.uint8))
        px = img.pixels
        assert np.array_equal(flip_horizontal(flip_horizontal(img)).pixels, px)
        assert np.array_equal(flip_vertical(flip_vertical(img)).pixels, px)
        assert np.array_equal(flip_horizontal(flip_vertical(img)).pixels, flip_vertical(flip_horizontal(img)).pixels)
        scaled = rescale(img).pixels
        assert scaled.min() >= 0.0 and scaled.max() <= 1.0
        target = int(rng.integers(1, 80))
        assert resize(img, target).shape == (target, target, 3)
        assert resize(rescale(img), target).shape == (target, target, 3)
        assert np.array_equal(augment(img, off, np.random.default_rng(0)).pixels, px)


@pytest.mark.criterion(9, "class-weight identity in rational arithmetic")
def test_class_weight_identity():
    rnd = random.Random(9)
    for _ in range(200):
        counts = (rnd.randint(1, 10_000), rnd.randint(1, 10_000))
        w = class_weight_fractions(counts)
        assert w[0] * counts[0] + w[1] * counts[1] == sum(counts)
        assert compute_class_weights(counts) == tuple(float(x) for x in w)
    assert compute_class_weights((960, 960)) == (1.0, 1.0)


@pytest.mark.criterion(10, "pipeline runs end to end (accuracy reported, not gated)")
def test_end_to_end_pipeline(fixture_data, tmp_path, capsys):
    root, _ = fixture_data
    run = tmp_path / "vgg"
    assert main(["train", "--experiment", "vgg16", "--data-dir", str(root), "--out-dir", str(run),
                 "--epochs", "1", "--seed", "3"]) == 0
    assert "learning_rate: 0.01\n" in (run / "config.snapshot").read_text()
    manifest = json.loads((run / "run_manifest.json").read_text())
    assert manifest["status"] == "complete" and manifest["untrained_backbone"]
    assert main(["threshold", "--run-dir", str(run), "--policy", "youden"]) == 0
    assert main(["report", "--run-dir", str(run)]) == 0
    assert (run / "roc.png").is_file()

    # the real dataset is only checked when present; its accuracies are for comparison only
    real = os.environ.get(DATA_DIR_ENV)
    if real and Path(real).is_dir():
        splits = load_splits(preset("vgg16"), real)
        sizes = {k: len(v) for k, v in splits.items()}
        print(f"real dataset split sizes {sizes} (reported: 1920/640/640)")
