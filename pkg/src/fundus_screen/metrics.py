"""Binary classification metrics: confusion matrix, per-class rates, ROC/AUC
and screening-threshold selection.

Everything here is plain numpy so it can be checked against hand arithmetic.
A metric whose denominator is zero is reported as ``UNDEFINED`` (NaN), which
propagates through aggregates instead of silently counting as 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

UNDEFINED = math.nan
CLASSES = (0, 1)


def is_undefined(value: float) -> bool:
    return isinstance(value, float) and math.isnan(value)


def _ratio(num: int | float, den: int | float) -> float:
    if den == 0:
        return UNDEFINED
    return num / den


def _as_binary(values: Sequence[int] | np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size and not np.isin(arr, CLASSES).all():
        bad = arr[~np.isin(arr, CLASSES)][0]
        raise ValueError(f"{name} must contain only 0/1, found {bad!r}")
    return arr.astype(np.int64)


@dataclass(frozen=True)
class ConfusionMatrix:
    """2x2 counts; entry ``[i][j]`` is samples of true class i predicted as j."""

    counts: tuple[tuple[int, int], tuple[int, int]]

    def __post_init__(self) -> None:
        arr = np.asarray(self.counts)
        if arr.shape != (2, 2):
            raise ValueError(f"confusion matrix must be 2x2, got shape {arr.shape}")
        if (arr < 0).any():
            raise ValueError("confusion matrix entries must be non-negative")
        if arr.sum() == 0:
            raise ValueError("confusion matrix is empty")
        object.__setattr__(
            self, "counts", tuple(tuple(int(v) for v in row) for row in arr)
        )

    @classmethod
    def from_array(cls, arr) -> "ConfusionMatrix":
        arr = np.asarray(arr)
        return cls(((int(arr[0, 0]), int(arr[0, 1])), (int(arr[1, 0]), int(arr[1, 1]))))

    def __getitem__(self, ij: tuple[int, int]) -> int:
        i, j = ij
        return self.counts[i][j]

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts)

    def support(self, c: int) -> int:
        return sum(self.counts[c])

    def predicted(self, c: int) -> int:
        return self.counts[0][c] + self.counts[1][c]

    def to_list(self) -> list[list[int]]:
        return [list(row) for row in self.counts]


def confusion_matrix(y_true, y_pred) -> ConfusionMatrix:
    t = _as_binary(y_true, "y_true")
    p = _as_binary(y_pred, "y_pred")
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.size} labels vs {p.size} predictions")
    if t.size == 0:
        raise ValueError("cannot build a confusion matrix from zero samples")
    counts = np.zeros((2, 2), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix.from_array(counts)


def accuracy(cm: ConfusionMatrix) -> float:
    return (cm[0, 0] + cm[1, 1]) / cm.total


def precision(cm: ConfusionMatrix, c: int) -> float:
    return _ratio(cm[c, c], cm.predicted(c))


def recall(cm: ConfusionMatrix, c: int) -> float:
    return _ratio(cm[c, c], cm.support(c))


def f1(cm: ConfusionMatrix, c: int) -> float:
    # undefined whenever precision or recall is; 2TP/(2TP+FP+FN) is the
    # harmonic mean and also covers precision = recall = 0
    if is_undefined(precision(cm, c)) or is_undefined(recall(cm, c)):
        return UNDEFINED
    tp = cm[c, c]
    fp = cm.predicted(c) - tp
    fn = cm.support(c) - tp
    return _ratio(2 * tp, 2 * tp + fp + fn)


def weighted_f1(cm: ConfusionMatrix) -> float:
    n = cm.total
    return sum(cm.support(c) / n * f1(cm, c) for c in CLASSES)


# --------------------------------------------------------------------------
# ROC


@dataclass(frozen=True)
class RocCurve:
    """ROC points ordered from the strictest threshold (+inf) to the loosest."""

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    positive_class: int = 1

    def __post_init__(self) -> None:
        if not (len(self.thresholds) == len(self.fpr) == len(self.tpr) >= 2):
            raise ValueError("ROC curve needs at least two aligned points")
        for name, arr in (("fpr", self.fpr), ("tpr", self.tpr)):
            if (arr < 0).any() or (arr > 1).any():
                raise ValueError(f"{name} outside [0, 1]")
            if (np.diff(arr) < 0).any():
                raise ValueError(f"{name} is not monotone along the curve")
        if (self.fpr[0], self.tpr[0]) != (0.0, 0.0) or (self.fpr[-1], self.tpr[-1]) != (1.0, 1.0):
            raise ValueError("ROC curve must start at (0,0) and end at (1,1)")

    def __len__(self) -> int:
        return len(self.thresholds)

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()))


def class_scores(scores, positive_class: int) -> np.ndarray:
    """Score for ``positive_class`` from either a diseased-class score vector
    (class 0 uses the complement ``1 - s``) or an ``(n, 2)`` softmax array."""
    s = np.asarray(scores, dtype=np.float64)
    if positive_class not in CLASSES:
        raise ValueError(f"positive_class must be 0 or 1, got {positive_class!r}")
    if s.ndim == 2:
        if s.shape[1] != 2:
            raise ValueError(f"expected (n, 2) score pairs, got shape {s.shape}")
        return s[:, positive_class]
    if s.ndim != 1:
        raise ValueError(f"scores must be 1-D or (n, 2), got shape {s.shape}")
    return s if positive_class == 1 else 1.0 - s


def _check_two_classes(t: np.ndarray, what: str) -> None:
    n_pos = int(t.sum())
    if n_pos == 0 or n_pos == t.size:
        raise ValueError(f"{what} is undefined when y_true holds a single class")


def roc_curve(y_true, scores, positive_class: int = 1) -> RocCurve:
    """Sweep ``score >= threshold`` over every distinct score.

    ``scores`` are diseased-class scores or an ``(n, 2)`` pair array, of which
    only the diseased column is used: for two classes the normal-class score
    is its complement. ``positive_class`` picks which label counts as positive.
    """
    t = _as_binary(y_true, "y_true")
    s1 = class_scores(scores, 1)
    if s1.shape != t.shape:
        raise ValueError(f"length mismatch: {t.size} labels vs {s1.size} scores")
    if positive_class not in CLASSES:
        raise ValueError(f"positive_class must be 0 or 1, got {positive_class!r}")
    # Class 0 ranks by -p1: negation is exact, whereas 1 - p1 (or a float
    # softmax p0) can merge or split ties and break the two-class symmetry.
    s = s1 if positive_class == 1 else -s1
    pos = (t == positive_class).astype(np.int64)
    _check_two_classes(pos, "ROC")

    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    pos_sorted = pos[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.diff(s_sorted) != 0)
    ends = np.append(ends, s.size - 1)
    tp = np.cumsum(pos_sorted)[ends]
    fp = (ends + 1) - tp
    n_pos, n_neg = pos.sum(), pos.size - pos.sum()

    thresholds = np.concatenate(([np.inf], s_sorted[ends]))
    if positive_class == 0:
        thresholds = 1.0 + thresholds  # reported on the 1 - p1 scale
    fpr = np.concatenate(([0.0], fp / n_neg))
    tpr = np.concatenate(([0.0], tp / n_pos))
    return RocCurve(thresholds, fpr, tpr, positive_class)


def auc(curve: RocCurve) -> float:
    dx = np.diff(curve.fpr)
    return float(np.sum(dx * (curve.tpr[1:] + curve.tpr[:-1]) / 2.0))


def auc_pairwise_oracle(y_true, scores) -> float:
    """Concordance probability over every (positive, negative) pair; ties
    score one half. Quadratic on purpose: it is the independent check."""
    t = _as_binary(y_true, "y_true")
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != t.shape:
        raise ValueError(f"length mismatch: {t.size} labels vs {s.size} scores")
    _check_two_classes(t, "AUC")
    pos = s[t == 1][:, None]
    neg = s[t == 0][None, :]
    wins = np.count_nonzero(pos > neg)
    ties = np.count_nonzero(pos == neg)
    return (wins + 0.5 * ties) / (pos.size * neg.size)


# --------------------------------------------------------------------------
# thresholds


@dataclass(frozen=True)
class SweepRow:
    threshold: float
    precision: float
    recall: float
    f1: float
    accuracy: float
    youden_j: float
    fpr: float


def predict_at(scores, threshold: float) -> np.ndarray:
    return (np.asarray(scores, dtype=np.float64) >= threshold).astype(np.int64)


def sweep_row(y_true, scores, threshold: float) -> SweepRow:
    t = _as_binary(y_true, "y_true")
    pred = predict_at(scores, threshold)
    cm = confusion_matrix(t, pred)
    tpr = recall(cm, 1)
    fpr = _ratio(cm[0, 1], cm.support(0))
    return SweepRow(
        threshold=float(threshold),
        precision=precision(cm, 1),
        recall=tpr,
        f1=f1(cm, 1),
        accuracy=accuracy(cm),
        youden_j=tpr - fpr,
        fpr=fpr,
    )


def threshold_sweep(y_true, scores) -> list[SweepRow]:
    """One row per candidate threshold, ascending: -inf, each distinct
    diseased-class score, +inf."""
    t = _as_binary(y_true, "y_true")
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != t.shape:
        raise ValueError(f"length mismatch: {t.size} labels vs {s.size} scores")
    _check_two_classes(t, "threshold sweep")
    candidates = np.concatenate(([-np.inf], np.unique(s), [np.inf]))
    return [sweep_row(t, s, th) for th in candidates]


@dataclass(frozen=True)
class Policy:
    kind: str
    min_recall: float | None = None

    @classmethod
    def parse(cls, text: str) -> "Policy":
        text = text.strip()
        if text == "youden":
            return cls("youden")
        if text.startswith("min_recall="):
            try:
                r = float(text.split("=", 1)[1])
            except ValueError:
                raise ValueError(f"bad min_recall value in policy {text!r}") from None
            return cls("min_recall", r)
        raise ValueError(f"unknown threshold policy {text!r}; use youden or min_recall=R")

    def __str__(self) -> str:
        return "youden" if self.kind == "youden" else f"min_recall={self.min_recall:g}"


def select_threshold(sweep: Sequence[SweepRow], policy: Policy | str) -> float:
    if isinstance(policy, str):
        policy = Policy.parse(policy)
    if not sweep:
        raise ValueError("empty threshold sweep")
    rows = sorted(sweep, key=lambda r: r.threshold)
    if policy.kind == "youden":
        best = max(r.youden_j for r in rows)
        return max(r.threshold for r in rows if r.youden_j == best)
    if policy.kind == "min_recall":
        r_min = policy.min_recall
        if r_min is None or not 0.0 <= r_min <= 1.0:
            raise ValueError(f"min_recall must lie in [0, 1], got {r_min}")
        ok = [r.threshold for r in rows if not is_undefined(r.recall) and r.recall >= r_min]
        if not ok:
            raise ValueError(f"no threshold reaches recall >= {r_min}")
        return max(ok)
    raise ValueError(f"unknown policy kind {policy.kind!r}")


# --------------------------------------------------------------------------
# report


@dataclass
class ClassMetrics:
    cls: int
    precision: float
    recall: float
    f1: float
    support: int
    auc: float = UNDEFINED


@dataclass
class MetricsReport:
    accuracy: float
    per_class: list[ClassMetrics]
    weighted_f1: float
    confusion: ConfusionMatrix
    threshold: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def num(v):
            return None if is_undefined(v) else v

        out = {
            "accuracy": num(self.accuracy),
            "per_class": [
                {
                    "class": m.cls,
                    "precision": num(m.precision),
                    "recall": num(m.recall),
                    "f1": num(m.f1),
                    "support": m.support,
                    "auc": num(m.auc),
                }
                for m in self.per_class
            ],
            "weighted_f1": num(self.weighted_f1),
            "threshold": self.threshold,
            "confusion_matrix": self.confusion.to_list(),
        }
        out.update(self.extra)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        def num(v):
            return UNDEFINED if v is None else float(v)

        known = {"accuracy", "per_class", "weighted_f1", "threshold", "confusion_matrix"}
        return cls(
            accuracy=num(d["accuracy"]),
            per_class=[
                ClassMetrics(
                    cls=int(m["class"]),
                    precision=num(m["precision"]),
                    recall=num(m["recall"]),
                    f1=num(m["f1"]),
                    support=int(m["support"]),
                    auc=num(m.get("auc")),
                )
                for m in d["per_class"]
            ],
            weighted_f1=num(d["weighted_f1"]),
            confusion=ConfusionMatrix.from_array(d["confusion_matrix"]),
            threshold=float(d["threshold"]),
            extra={k: v for k, v in d.items() if k not in known},
        )


def report_from_confusion(cm: ConfusionMatrix, threshold: float = 0.5) -> MetricsReport:
    return MetricsReport(
        accuracy=accuracy(cm),
        per_class=[
            ClassMetrics(c, precision(cm, c), recall(cm, c), f1(cm, c), cm.support(c))
            for c in CLASSES
        ],
        weighted_f1=weighted_f1(cm),
        confusion=cm,
        threshold=threshold,
    )


def evaluate_scores(y_true, scores, threshold: float = 0.5) -> MetricsReport:
    """Full report from diseased-class scores (1-D) or softmax pairs (n, 2).

    Hard predictions are ``p(diseased) >= threshold``. Per-class AUC is left
    undefined when only one class is present.
    """
    t = _as_binary(y_true, "y_true")
    s1 = class_scores(scores, 1)
    report = report_from_confusion(confusion_matrix(t, predict_at(s1, threshold)), threshold)
    if 0 < t.sum() < t.size:
        for m in report.per_class:
            m.auc = auc(roc_curve(t, scores, positive_class=m.cls))
    return report


def format_value(v: float, digits: int = 2) -> str:
    return "undefined" if is_undefined(v) else f"{v:.{digits}f}"


def format_report(report: MetricsReport, title: str | None = None) -> str:
    lines = []
    if title:
        lines.append(title)
    cm = report.confusion
    lines.append(f"accuracy      {format_value(report.accuracy)}")
    lines.append(f"weighted F1   {format_value(report.weighted_f1)}")
    lines.append(f"threshold     {report.threshold:g}")
    lines.append("class  precision  recall  f1    support  auc")
    for m in report.per_class:
        lines.append(
            f"{m.cls:<6} {format_value(m.precision):<10} {format_value(m.recall):<7} "
            f"{format_value(m.f1):<5} {m.support:<8} {format_value(m.auc)}"
        )
    lines.append("confusion matrix (rows true, cols predicted)")
    for row in cm.counts:
        lines.append("  " + "  ".join(f"{v:>5d}" for v in row))
    return "\n".join(lines)
