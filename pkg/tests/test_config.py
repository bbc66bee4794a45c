import pytest

from fundus_screen.config import ConfigError, config_from_dict, dump_config, parse_config, preset


def write(tmp_path, text):
    p = tmp_path / "cfg.yaml"
    p.write_text(text)
    return p


def test_vgg16_preset():
    cfg = config_from_dict({"preset": "vgg16"})
    assert (cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.use_class_weights) == (5, 32, 0.01, True)
    assert cfg.loss == "categorical_cross_entropy" and cfg.image_size == 254


def test_baseline_preset():
    cfg = config_from_dict({"preset": "baseline"})
    assert cfg.epochs == 10 and not cfg.use_class_weights
    assert cfg.batch_size == 32 and cfg.loss == "binary_cross_entropy" and cfg.image_size == 64
    assert cfg.augment.is_identity


def test_unknown_key_named(tmp_path):
    with pytest.raises(ConfigError, match="epcohs"):
        parse_config(write(tmp_path, "preset: baseline\nepcohs: 3\n"))


def test_unknown_nested_key(tmp_path):
    with pytest.raises(ConfigError, match="augment: vflip"):
        parse_config(write(tmp_path, "preset: vgg16\naugment:\n  vflip: true\n"))


def test_type_mismatch(tmp_path):
    with pytest.raises(ConfigError, match="epochs: expected int"):
        parse_config(write(tmp_path, "preset: baseline\nepochs: ten\n"))


def test_bool_is_not_int():
    with pytest.raises(ConfigError):
        config_from_dict({"preset": "baseline", "seed": True})


def test_missing_preset(tmp_path):
    with pytest.raises(ConfigError, match="preset"):
        parse_config(write(tmp_path, "epochs: 3\n"))


def test_overrides(tmp_path):
    cfg = parse_config(
        write(
            tmp_path,
            "preset: vgg16\nepochs: 2\nseed: 9\nlearning_rate: 1\naugment:\n  vertical_flip: false\n"
            "data:\n  filename_template: '{id}.jpg'\n  splits:\n    test: {labels: t.csv, images: timg}\n",
        )
    )
    assert cfg.epochs == 2 and cfg.seed == 9 and cfg.learning_rate == 1.0
    assert cfg.augment.horizontal_flip and not cfg.augment.vertical_flip
    assert cfg.data.splits["test"].labels == "t.csv"
    assert cfg.data.splits["train"].labels == "train/labels.csv"


def test_architecture_invariants_enforced():
    with pytest.raises(ConfigError, match="254"):
        config_from_dict({"preset": "vgg16", "image_size": 224})
    with pytest.raises(ConfigError):
        config_from_dict({"preset": "baseline", "loss": "categorical_cross_entropy"})


@pytest.mark.parametrize("name", ["baseline", "vgg16"])
def test_snapshot_round_trip(tmp_path, name):
    cfg = preset(name).replace(seed=4)
    assert parse_config(write(tmp_path, dump_config(cfg))) == cfg


def test_snapshot_records_transfer_lr():
    assert "learning_rate: 0.01\n" in dump_config(preset("vgg16"))


def test_bad_yaml(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(write(tmp_path, "preset: [\n"))
