import json
import random
from fractions import Fraction

import pytest
import torch

from fundus_screen.config import preset
from fundus_screen.dataset import DatasetSplit, generate_synthetic_fixture
from fundus_screen.models import baseline_cnn_spec, instantiate, transfer_head_spec
from fundus_screen.pipeline import RunError, RunManifest, run_experiment
from fundus_screen.trainer import (
    TrainConfig,
    TrainHistory,
    TrainingError,
    class_weight_fractions,
    compute_class_weights,
    train,
)


def baseline_cfg(**kw):
    return TrainConfig.from_experiment(preset("baseline").replace(**kw))


class TestClassWeights:
    def test_balanced(self):
        assert compute_class_weights((960, 960)) == (1.0, 1.0)

    def test_imbalanced(self):
        w = compute_class_weights((1500, 420))
        assert w[0] == pytest.approx(0.64)
        assert w[1] == pytest.approx(1920 / 840)
        assert round(w[1], 4) == 2.2857

    def test_zero_count(self):
        with pytest.raises(ValueError, match="zero class count"):
            compute_class_weights((640, 0))

    def test_wrong_class_count(self):
        with pytest.raises(ValueError):
            compute_class_weights((1, 2, 3))

    def test_identity_exact(self):
        rnd = random.Random(0)
        for _ in range(50):
            counts = (rnd.randint(1, 5000), rnd.randint(1, 5000))
            w = class_weight_fractions(counts)
            assert sum(wc * nc for wc, nc in zip(w, counts)) == Fraction(sum(counts))


class TestTrain:
    def test_baseline_preset_runs_ten_epochs(self, fixture_data):
        _, splits = fixture_data
        model = instantiate(baseline_cnn_spec(), 0)
        _, history = train(model, splits["train"], splits["validation"], baseline_cfg())
        assert len(history) == 10
        assert all(len(getattr(history, k)) == 10 for k in ("train_loss", "train_acc", "val_loss", "val_acc"))
        assert all(v == v for v in history.train_loss + history.val_loss)

    def test_seed_determinism(self, fixture_data):
        _, splits = fixture_data
        runs = []
        for _ in range(2):
            model = instantiate(baseline_cnn_spec(), 5)
            _, h = train(model, splits["train"], splits["validation"], baseline_cfg(epochs=3, seed=5))
            runs.append(h)
        assert runs[0].train_loss[-1] == runs[1].train_loss[-1]
        assert runs[0].to_csv() == runs[1].to_csv()

    def test_weights_on_balanced_data_change_nothing(self, fixture_data):
        _, splits = fixture_data
        out = []
        for flag in (False, True):
            model = instantiate(baseline_cnn_spec(), 2)
            _, h = train(model, splits["train"], splits["validation"], baseline_cfg(epochs=2, use_class_weights=flag))
            out.append(h.to_csv())
        assert out[0] == out[1]

    def test_weights_matter_on_imbalanced_data(self, fixture_data, tmp_path):
        _, splits = fixture_data
        recs = tuple(r for r in splits["train"].records if r.label == 0) + tuple(
            r for r in splits["train"].records if r.label == 1
        )[:2]
        skewed = DatasetSplit("train", recs)
        out = []
        for flag in (False, True):
            model = instantiate(baseline_cnn_spec(), 2)
            _, h = train(model, skewed, splits["validation"], baseline_cfg(epochs=1, use_class_weights=flag))
            out.append(h.train_loss[0])
        assert out[0] != out[1]

    def test_nan_aborts_with_location(self, fixture_data):
        _, splits = fixture_data
        model = instantiate(baseline_cnn_spec(), 0)
        with torch.no_grad():
            model.body[-1].bias.fill_(float("nan"))
        with pytest.raises(TrainingError, match="epoch 1, batch 1"):
            train(model, splits["train"], splits["validation"], baseline_cfg(epochs=1))

    def test_spec_config_mismatch(self, fixture_data):
        _, splits = fixture_data
        model = instantiate(baseline_cnn_spec(), 0)
        with pytest.raises(TrainingError, match="config is for"):
            train(model, splits["train"], splits["validation"], TrainConfig.from_experiment(preset("vgg16")))

    def test_empty_split(self, fixture_data):
        _, splits = fixture_data
        with pytest.raises(TrainingError, match="empty"):
            train(instantiate(baseline_cnn_spec(), 0), DatasetSplit("train", ()), splits["validation"], baseline_cfg())

    def test_history_csv_round_trip(self):
        h = TrainHistory([0.5, 0.25], [0.5, 0.75], [0.6, 0.3], [0.5, 1.0])
        text = h.to_csv()
        assert text.splitlines()[0] == "epoch,train_loss,train_acc,val_loss,val_acc"
        assert TrainHistory.from_csv(text) == h


@pytest.mark.slow
def test_transfer_head_only_updates(fixture_data):
    _, splits = fixture_data
    model = instantiate(transfer_head_spec(), 0)
    before = {k: v.clone() for k, v in model.backbone.state_dict().items()}
    head_before = model.body[-1].weight.clone()
    cfg = TrainConfig.from_experiment(preset("vgg16").replace(epochs=1))
    train(model, splits["train"], splits["validation"], cfg)
    assert all(torch.equal(before[k], v) for k, v in model.backbone.state_dict().items())
    assert not torch.equal(head_before, model.body[-1].weight)


class TestRunExperiment:
    def test_run_directory(self, fixture_data, tmp_path):
        root, _ = fixture_data
        out = tmp_path / "run"
        _, history, report = run_experiment(preset("baseline").replace(epochs=2, seed=3), root, out)
        for name in ("config.snapshot", "history.csv", "model.pt", "metrics.json", "roc_class0.csv",
                     "roc_class1.csv", "run_manifest.json", "metrics_validation.json", "predictions_test.csv"):
            assert (out / name).is_file(), name
        manifest = RunManifest.load(out)
        assert manifest.status == "complete"
        assert set(manifest.dataset_checksums) == {"train", "validation", "test"}
        assert (out / manifest.artifacts["model"]).is_file()
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["split"] == "test"
        assert sum(m["support"] for m in metrics["per_class"]) == 8
        assert (out / "manifests" / "test.csv").read_text().startswith("25,test/images/25.png,")

    def test_collision_requires_force(self, fixture_data, tmp_path):
        root, _ = fixture_data
        out = tmp_path / "run"
        cfg = preset("baseline").replace(epochs=1)
        run_experiment(cfg, root, out)
        with pytest.raises(RunError, match="--force"):
            run_experiment(cfg, root, out)
        run_experiment(cfg, root, out, force=True)

    def test_force_refuses_foreign_directory(self, fixture_data, tmp_path):
        root, _ = fixture_data
        (tmp_path / "keep.txt").write_text("x")
        with pytest.raises(RunError, match="refusing"):
            run_experiment(preset("baseline"), root, tmp_path, force=True)

    def test_failed_run_marked_incomplete(self, tmp_path):
        generate_synthetic_fixture(tmp_path / "data" / "train", 2, 16, seed=1)
        out = tmp_path / "run"
        with pytest.raises(Exception):
            run_experiment(preset("baseline"), tmp_path / "data", out)
        manifest = RunManifest.load(out)
        assert manifest.status == "incomplete" and "not found" in manifest.error
