"""Static figures for a run: ROC curves, training history, confusion matrix.

Each function takes already-computed plot data and writes one image file.
"""
from __future__ import annotations

import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

CLASS_NAMES = ("Normal", "Diseased")

RC = {
    "figure.figsize": (4.8, 4.0),
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.5,
}


def _save(fig, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps repeated renders byte-stable
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_roc(curves: dict[int, tuple[np.ndarray, np.ndarray, float]], path, title: str = "ROC") -> Path:
    """``curves`` maps class -> (fpr, tpr, auc)."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.plot([0, 1], [0, 1], ls="--", color="0.6", lw=1, label="chance")
        for c, (fpr, tpr, area) in sorted(curves.items()):
            ax.plot(fpr, tpr, drawstyle="default", label=f"Class {c} ({CLASS_NAMES[c]}), AUC = {area:.2f}")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("False positive rate")
        ax.set_ylabel("True positive rate")
        ax.set_title(title)
        ax.legend(loc="lower right", frameon=False)
        return _save(fig, path)


def plot_history(rows: dict[str, list[float]], path, title: str = "Training history") -> Path:
    epochs = np.arange(1, len(rows["train_loss"]) + 1)
    with plt.rc_context(RC):
        fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(8.0, 3.2))
        ax_loss.plot(epochs, rows["train_loss"], marker="o", ms=3, label="train")
        ax_loss.plot(epochs, rows["val_loss"], marker="o", ms=3, label="validation")
        ax_loss.set_xlabel("Epoch")
        ax_loss.set_ylabel("Loss")
        ax_acc.plot(epochs, rows["train_acc"], marker="o", ms=3, label="train")
        ax_acc.plot(epochs, rows["val_acc"], marker="o", ms=3, label="validation")
        ax_acc.set_xlabel("Epoch")
        ax_acc.set_ylabel("Accuracy")
        ax_acc.set_ylim(0, 1.02)
        ax_acc.legend(frameon=False)
        fig.suptitle(title)
        return _save(fig, path)


def plot_confusion_matrix(counts, path, title: str = "Confusion matrix") -> Path:
    counts = np.asarray(counts)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(3.6, 3.2))
        ax.imshow(counts, cmap="Blues")
        for (i, j), v in np.ndenumerate(counts):
            color = "white" if v > counts.max() / 2 else "black"
            ax.text(j, i, str(v), ha="center", va="center", color=color)
        ax.set_xticks([0, 1], [f"{c}" for c in CLASS_NAMES])
        ax.set_yticks([0, 1], [f"{c}" for c in CLASS_NAMES])
        ax.set_xlabel("Predicted")
        ax.set_ylabel("True")
        ax.set_title(title)
        return _save(fig, path)


def plot_threshold_sweep(thresholds, recall, precision, path, chosen: float | None = None) -> Path:
    t = np.asarray(thresholds, dtype=float)
    finite = np.isfinite(t)
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.plot(t[finite], np.asarray(recall)[finite], label="recall (Diseased)")
        ax.plot(t[finite], np.asarray(precision, dtype=float)[finite], label="precision (Diseased)")
        if chosen is not None and np.isfinite(chosen):
            ax.axvline(chosen, ls=":", color="k", lw=1, label=f"chosen {chosen:.3f}")
        ax.set_xlabel("Threshold on p(Diseased)")
        ax.set_ylim(0, 1.02)
        ax.legend(frameon=False)
        return _save(fig, path)
