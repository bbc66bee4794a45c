"""Class weighting and the seeded training loop shared by both experiments."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import torch
import torch.nn.functional as F

from .config import ExperimentConfig
from .dataset import DatasetSplit
from .models import ScreeningModel, predict
from .preprocess import AugmentConfig, Image, augment, encode_label, load_image, rescale, resize, sample_rng, to_tensor

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    experiment: str
    epochs: int
    batch_size: int
    learning_rate: float
    loss: str
    use_class_weights: bool
    seed: int
    augment: AugmentConfig = AugmentConfig()
    threshold: float = 0.5

    @classmethod
    def from_experiment(cls, cfg: ExperimentConfig) -> "TrainConfig":
        return cls(
            experiment=cfg.experiment,
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            learning_rate=cfg.learning_rate,
            loss=cfg.loss,
            use_class_weights=cfg.use_class_weights,
            seed=cfg.seed,
            augment=cfg.augment,
            threshold=cfg.threshold,
        )


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)

    def rows(self):
        for i in range(len(self)):
            yield i + 1, self.train_loss[i], self.train_acc[i], self.val_loss[i], self.val_acc[i]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for epoch, *vals in self.rows():
            w.writerow([epoch, *(repr(float(v)) for v in vals)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainHistory":
        h = cls()
        for row in csv.DictReader(io.StringIO(text)):
            for key in HISTORY_COLUMNS[1:]:
                getattr(h, key).append(float(row[key]))
        return h


def compute_class_weights(class_counts) -> tuple[float, float]:
    """Balanced inverse frequency ``N / (K * N_c)`` for K = 2 classes."""
    counts = [int(c) for c in class_counts]
    if len(counts) != 2:
        raise ValueError(f"expected counts for exactly 2 classes, got {len(counts)}")
    if min(counts) < 1:
        raise ValueError(f"class weights are undefined with a zero class count: {tuple(counts)}")
    exact = class_weight_fractions(counts)
    return tuple(float(w) for w in exact)


def class_weight_fractions(class_counts) -> tuple[Fraction, Fraction]:
    counts = [int(c) for c in class_counts]
    n = sum(counts)
    return tuple(Fraction(n, 2 * c) for c in counts)


# --------------------------------------------------------------------------
# data


def load_split_images(split: DatasetSplit, image_size: int) -> list[Image]:
    """Decode and resize every image once; kept as uint8 to bound memory."""
    if len(split) == 0:
        raise TrainingError(f"split {split.name!r} is empty")
    return [resize(load_image(r.path), image_size) for r in split.records]


def make_batch(
    images: list[Image],
    indices,
    aug: AugmentConfig | None = None,
    seed: int = 0,
    epoch: int = 0,
) -> torch.Tensor:
    out = []
    for i in indices:
        img = images[i]
        if aug is not None and not aug.is_identity:
            img = augment(img, aug, sample_rng(seed, epoch, int(i)))
        out.append(rescale(img))
    return to_tensor(out)


def predict_images(model: ScreeningModel, images: list[Image], batch_size: int = 32) -> np.ndarray:
    """Scores for un-augmented images: ``(N,)`` or ``(N, 2)`` float64."""
    parts = []
    for start in range(0, len(images), batch_size):
        batch = make_batch(images, range(start, min(start + batch_size, len(images))))
        parts.append(predict(model, batch).numpy())
    return np.concatenate(parts).astype(np.float64)


def diseased_scores(scores: np.ndarray) -> np.ndarray:
    return scores if scores.ndim == 1 else scores[:, 1]


def _per_sample_loss(model: ScreeningModel, logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    if model.spec.head_kind == "sigmoid_scalar":
        targets = torch.tensor([encode_label(int(y), "sigmoid_scalar") for y in labels], dtype=logits.dtype)
        return F.binary_cross_entropy_with_logits(logits[:, 0], targets, reduction="none")
    targets = torch.from_numpy(np.stack([encode_label(int(y), "softmax_pair") for y in labels]))
    return -(targets * F.log_softmax(logits, dim=1)).sum(dim=1)


def _predicted_labels(model: ScreeningModel, logits: torch.Tensor, threshold: float) -> torch.Tensor:
    if model.spec.head_kind == "sigmoid_scalar":
        p = torch.sigmoid(logits[:, 0].double())
    else:
        p = torch.softmax(logits.double(), dim=1)[:, 1]
    return (p >= threshold).long()


def _eval_loss(model: ScreeningModel, scores: np.ndarray, labels: np.ndarray) -> float:
    eps = 1e-12
    if model.spec.head_kind == "sigmoid_scalar":
        p = np.clip(scores, eps, 1 - eps)
        return float(np.mean(-(labels * np.log(p) + (1 - labels) * np.log(1 - p))))
    p = np.clip(scores[np.arange(labels.size), labels], eps, 1.0)
    return float(np.mean(-np.log(p)))


def train(
    model: ScreeningModel,
    train_split: DatasetSplit,
    val_split: DatasetSplit,
    cfg: TrainConfig,
    train_images: list[Image] | None = None,
    val_images: list[Image] | None = None,
) -> tuple[ScreeningModel, TrainHistory]:
    """Run exactly ``cfg.epochs`` epochs of Adam on the trainable parameters.

    With class weights on, each sample's loss is multiplied by its class
    weight before averaging over the batch. Batch order is a permutation
    keyed by (seed, epoch). The final-epoch weights are returned.
    """
    if model.spec.name != cfg.experiment:
        raise TrainingError(f"model is {model.spec.name} but config is for {cfg.experiment}")
    for split in (train_split, val_split):
        if len(split) == 0:
            raise TrainingError(f"split {split.name!r} is empty")
    if train_images is None:
        train_images = load_split_images(train_split, model.spec.input_size)
    if val_images is None:
        val_images = load_split_images(val_split, model.spec.input_size)

    labels = train_split.labels
    val_labels = val_split.labels
    weights = torch.ones(2, dtype=torch.float32)
    if cfg.use_class_weights:
        weights = torch.tensor(compute_class_weights(train_split.class_counts), dtype=torch.float32)
        log.info("class weights %s", weights.tolist())

    torch.manual_seed(cfg.seed)
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=cfg.learning_rate)
    history = TrainHistory()

    for epoch in range(cfg.epochs):
        model.train()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_images))
        loss_sum, correct = 0.0, 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            x = make_batch(train_images, idx, cfg.augment, cfg.seed, epoch)
            y = torch.from_numpy(labels[idx])
            logits = model(x)
            loss = (_per_sample_loss(model, logits, y) * weights[y]).mean()
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss.item()} at epoch {epoch + 1}, batch {b + 1}")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            loss_sum += loss.item() * len(idx)
            correct += int((_predicted_labels(model, logits.detach(), cfg.threshold) == y).sum())

        val_scores = predict_images(model, val_images, cfg.batch_size)
        val_pred = (diseased_scores(val_scores) >= cfg.threshold).astype(np.int64)
        history.train_loss.append(loss_sum / len(order))
        history.train_acc.append(correct / len(order))
        history.val_loss.append(_eval_loss(model, val_scores, val_labels))
        history.val_acc.append(float(np.mean(val_pred == val_labels)))
        if not math.isfinite(history.val_loss[-1]):
            raise TrainingError(f"non-finite validation loss at epoch {epoch + 1}")
        log.info(
            "epoch %d/%d loss %.4f acc %.4f val_loss %.4f val_acc %.4f",
            epoch + 1, cfg.epochs, history.train_loss[-1], history.train_acc[-1],
            history.val_loss[-1], history.val_acc[-1],
        )
    model.eval()
    return model, history
