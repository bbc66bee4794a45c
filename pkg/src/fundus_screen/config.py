"""Experiment configuration: presets, strict YAML parsing, snapshots."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .dataset import DEFAULT_FILENAME_TEMPLATE, DEFAULT_ID_COLUMN, DEFAULT_LABEL_COLUMN, SPLIT_NAMES
from .models import BASELINE, TRANSFER
from .preprocess import AugmentConfig

DATA_DIR_ENV = "FUNDUS_SCREEN_DATA"
PRESET_NAMES = ("baseline", "vgg16")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SplitSource:
    labels: str
    images: str


def _default_splits() -> dict[str, SplitSource]:
    return {name: SplitSource(f"{name}/labels.csv", f"{name}/images") for name in SPLIT_NAMES}


@dataclass(frozen=True)
class DataLayout:
    """Where each split's label CSV and image directory live, relative to the
    data directory."""

    id_column: str = DEFAULT_ID_COLUMN
    label_column: str = DEFAULT_LABEL_COLUMN
    filename_template: str = DEFAULT_FILENAME_TEMPLATE
    splits: dict[str, SplitSource] = field(default_factory=_default_splits)


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str
    experiment: str
    image_size: int
    augment: AugmentConfig
    epochs: int
    batch_size: int
    learning_rate: float
    loss: str
    use_class_weights: bool
    seed: int = 0
    weights_path: str | None = None
    threshold: float = 0.5
    single_threaded: bool = True
    data: DataLayout = field(default_factory=DataLayout)

    def replace(self, **changes: Any) -> "ExperimentConfig":
        cfg = dataclasses.replace(self, **changes)
        validate(cfg)
        return cfg


def preset(name: str) -> ExperimentConfig:
    if name == "baseline":
        return ExperimentConfig(
            preset="baseline",
            experiment=BASELINE,
            image_size=64,
            augment=AugmentConfig(),
            epochs=10,
            batch_size=32,
            learning_rate=0.001,
            loss="binary_cross_entropy",
            use_class_weights=False,
        )
    if name == "vgg16":
        return ExperimentConfig(
            preset="vgg16",
            experiment=TRANSFER,
            image_size=254,
            augment=AugmentConfig(horizontal_flip=True, vertical_flip=True),
            epochs=5,
            batch_size=32,
            learning_rate=0.01,
            loss="categorical_cross_entropy",
            use_class_weights=True,
        )
    raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")


def validate(cfg: ExperimentConfig) -> None:
    expected = {BASELINE: (64, "binary_cross_entropy"), TRANSFER: (254, "categorical_cross_entropy")}
    if cfg.experiment not in expected:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}")
    size, loss = expected[cfg.experiment]
    if cfg.image_size != size:
        raise ConfigError(f"{cfg.experiment} takes {size}x{size} inputs, got image_size {cfg.image_size}")
    if cfg.loss != loss:
        raise ConfigError(f"{cfg.experiment} trains with {loss}, got loss {cfg.loss!r}")
    if cfg.epochs < 1 or cfg.batch_size < 1:
        raise ConfigError("epochs and batch_size must be >= 1")
    if not cfg.learning_rate > 0:
        raise ConfigError(f"learning_rate must be positive, got {cfg.learning_rate}")
    if not 0.0 <= cfg.threshold <= 1.0:
        raise ConfigError(f"threshold must be in [0, 1], got {cfg.threshold}")
    missing = [s for s in SPLIT_NAMES if s not in cfg.data.splits]
    if missing:
        raise ConfigError(f"data.splits is missing {', '.join(missing)}")


# --------------------------------------------------------------------------
# parsing

_SCALAR_TYPES = {
    "image_size": int,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "loss": str,
    "use_class_weights": bool,
    "seed": int,
    "weights_path": (str, type(None)),
    "threshold": float,
    "single_threaded": bool,
}
_AUGMENT_TYPES = {f.name: (float if f.type in ("float", float) else bool) for f in dataclasses.fields(AugmentConfig)}
_DATA_TYPES = {"id_column": str, "label_column": str, "filename_template": str}


def _check_type(key: str, value: Any, expected) -> Any:
    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if expected is int and isinstance(value, bool):
        raise ConfigError(f"{key}: expected int, got bool")
    if not isinstance(value, expected):
        names = expected.__name__ if isinstance(expected, type) else "/".join(t.__name__ for t in expected)
        raise ConfigError(f"{key}: expected {names}, got {type(value).__name__} {value!r}")
    return value


def _reject_unknown(section: str, given: dict, allowed) -> None:
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        where = f" in {section}" if section else ""
        raise ConfigError(f"unknown config key{where}: {', '.join(unknown)}")


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    _reject_unknown("", raw, {"preset", "augment", "data", *_SCALAR_TYPES})
    if "preset" not in raw:
        raise ConfigError("missing required key: preset")
    base = preset(_check_type("preset", raw["preset"], str))
    changes: dict[str, Any] = {}
    for key, expected in _SCALAR_TYPES.items():
        if key in raw:
            changes[key] = _check_type(key, raw[key], expected)

    if "augment" in raw:
        aug = raw["augment"] or {}
        if not isinstance(aug, dict):
            raise ConfigError("augment must be a mapping")
        _reject_unknown("augment", aug, _AUGMENT_TYPES)
        vals = {k: _check_type(f"augment.{k}", v, _AUGMENT_TYPES[k]) for k, v in aug.items()}
        changes["augment"] = dataclasses.replace(base.augment, **vals)

    if "data" in raw:
        data = raw["data"] or {}
        if not isinstance(data, dict):
            raise ConfigError("data must be a mapping")
        _reject_unknown("data", data, {*_DATA_TYPES, "splits"})
        vals = {k: _check_type(f"data.{k}", v, _DATA_TYPES[k]) for k, v in data.items() if k != "splits"}
        splits = dict(base.data.splits)
        for name, src in (data.get("splits") or {}).items():
            if name not in SPLIT_NAMES:
                raise ConfigError(f"unknown split {name!r} in data.splits")
            if not isinstance(src, dict):
                raise ConfigError(f"data.splits.{name} must be a mapping")
            _reject_unknown(f"data.splits.{name}", src, {"labels", "images"})
            missing = {"labels", "images"} - set(src)
            if missing:
                raise ConfigError(f"data.splits.{name} missing {', '.join(sorted(missing))}")
            splits[name] = SplitSource(
                _check_type(f"data.splits.{name}.labels", src["labels"], str),
                _check_type(f"data.splits.{name}.images", src["images"], str),
            )
        changes["data"] = DataLayout(splits=splits, **vals)

    return base.replace(**changes)


def parse_config(path: str | os.PathLike) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    return config_from_dict(raw or {})


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {"preset": cfg.preset}
    for key in _SCALAR_TYPES:
        out[key] = getattr(cfg, key)
    out["augment"] = dataclasses.asdict(cfg.augment)
    out["data"] = {
        "id_column": cfg.data.id_column,
        "label_column": cfg.data.label_column,
        "filename_template": cfg.data.filename_template,
        "splits": {k: dataclasses.asdict(v) for k, v in sorted(cfg.data.splits.items())},
    }
    return out


def dump_config(cfg: ExperimentConfig) -> str:
    """YAML snapshot that ``parse_config`` reads back to an equal config."""
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)
