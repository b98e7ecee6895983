"""Confusion matrix, accuracy/precision/recall/F1, quadratic weighted kappa.

All metrics operate on decoded grades (0..4), not on the 4-bit ordinal
vectors.  Kappa uses quadratic disagreement weights (i-j)^2 / (N-1)^2, so
predicting grade 4 for a grade-0 eye costs far more than an off-by-one.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import NUM_GRADES
from .errors import (
    DegenerateMarginalsError,
    EmptyInputError,
    InvalidGradeError,
    LengthMismatchError,
)


def confusion(actual, predicted, num_classes: int = NUM_GRADES) -> np.ndarray:
    """Count matrix with rows = actual grade, columns = predicted grade."""
    actual = np.asarray(actual, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if actual.shape != predicted.shape or actual.ndim != 1:
        raise LengthMismatchError(
            f"actual {actual.shape} and predicted {predicted.shape} must be equal-length 1-D"
        )
    if actual.size == 0:
        raise EmptyInputError("need at least one (actual, predicted) pair")
    for name, arr in (("actual", actual), ("predicted", predicted)):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise InvalidGradeError(
                f"{name} grades must lie in 0..{num_classes - 1}, "
                f"got range [{arr.min()}, {arr.max()}]"
            )
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (actual, predicted), 1)
    return cm


@dataclass
class MetricsReport:
    """Aggregate scores plus per-class breakdown and the raw confusion counts.

    f1 is the harmonic mean of the aggregate precision and recall (0 when
    both are 0).  Classes whose precision or recall had a zero denominator
    are listed in degenerate_classes and contribute 0.
    """

    accuracy: float
    precision: float
    recall: float
    f1: float
    qwk: float | None
    averaging: str
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    support: np.ndarray
    confusion: np.ndarray
    degenerate_classes: tuple[int, ...] = field(default_factory=tuple)

    def to_text(self) -> str:
        lines = [
            f"accuracy: {self.accuracy:.6f}",
            f"precision: {self.precision:.6f}",
            f"recall: {self.recall:.6f}",
            f"f1: {self.f1:.6f}",
            f"qwk: {'' if self.qwk is None else format(self.qwk, '.6f')}",
            f"averaging: {self.averaging}",
            f"degenerate_classes: {','.join(map(str, self.degenerate_classes))}",
        ]
        for g in range(len(self.support)):
            lines.append(
                f"class_{g}: precision={self.per_class_precision[g]:.6f} "
                f"recall={self.per_class_recall[g]:.6f} "
                f"f1={self.per_class_f1[g]:.6f} support={int(self.support[g])}"
            )
        lines.append("confusion:")
        lines.append(format_confusion(self.confusion))
        return "\n".join(lines) + "\n"

    def to_flat_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "qwk": self.qwk,
            "confusion": [int(v) for v in self.confusion.ravel()],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_flat_dict(), indent=2, sort_keys=True) + "\n"


def format_confusion(cm: np.ndarray) -> str:
    """Right-aligned integer grid, one row of predictions per actual grade."""
    width = max(1, len(str(int(cm.max())))) if cm.size else 1
    return "\n".join(
        " ".join(f"{int(v):>{width}d}" for v in row) for row in cm
    )


def classification_metrics(cm: np.ndarray, averaging: str = "weighted") -> MetricsReport:
    """Per-class and aggregate precision/recall/F1 plus accuracy (no kappa).

    averaging 'weighted' weights classes by support, which makes the
    aggregate recall equal the accuracy; 'macro' averages classes equally.
    Zero-denominator classes score 0 and are flagged.
    """
    cm = np.asarray(cm, dtype=np.float64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {cm.shape}")
    if averaging not in ("weighted", "macro"):
        raise ValueError(f"averaging must be 'weighted' or 'macro', got {averaging!r}")
    total = cm.sum()
    if total <= 0:
        raise EmptyInputError("confusion matrix has no counts")

    tp = np.diag(cm)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)

    degenerate = sorted(
        set(np.flatnonzero(predicted == 0)) | set(np.flatnonzero(support == 0))
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / np.where(predicted > 0, predicted, 1), 0.0)
        recall = np.where(support > 0, tp / np.where(support > 0, support, 1), 0.0)
        pr_sum = precision + recall
        f1 = np.where(pr_sum > 0, 2 * precision * recall / np.where(pr_sum > 0, pr_sum, 1), 0.0)

    if averaging == "weighted":
        weights = support / total
    else:
        weights = np.full(len(tp), 1.0 / len(tp))
    agg_precision = float(np.sum(weights * precision))
    agg_recall = float(np.sum(weights * recall))
    agg_f1 = (
        0.0
        if agg_precision + agg_recall == 0
        else 2 * agg_precision * agg_recall / (agg_precision + agg_recall)
    )
    return MetricsReport(
        accuracy=float(tp.sum() / total),
        precision=agg_precision,
        recall=agg_recall,
        f1=agg_f1,
        qwk=None,
        averaging=averaging,
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        support=support.astype(np.int64),
        confusion=np.asarray(cm, dtype=np.int64),
        degenerate_classes=tuple(int(g) for g in degenerate),
    )


def quadratic_weighted_kappa(cm: np.ndarray) -> float:
    """Cohen's kappa with quadratic weights, computed from a confusion matrix.

    kappa = 1 - sum(w * O) / sum(w * E) with w[i,j] = (i-j)^2 / (N-1)^2,
    O the observed counts and E the outer product of the marginals scaled
    to the same total.  Returns exactly 1.0 for a perfect diagonal.  When
    all mass sits on one identical grade the denominator vanishes: that is
    exact agreement (1.0); any other zero denominator is an error.
    """
    observed = np.asarray(cm, dtype=np.float64)
    n = observed.shape[0]
    total = observed.sum()
    if total <= 0:
        raise EmptyInputError("confusion matrix has no counts")

    idx = np.arange(n, dtype=np.float64)
    weights = (idx[:, None] - idx[None, :]) ** 2 / (n - 1) ** 2
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0)) / total

    denominator = float(np.sum(weights * expected))
    numerator = float(np.sum(weights * observed))
    if denominator == 0.0:
        if numerator == 0.0:
            return 1.0
        raise DegenerateMarginalsError(
            "weighted expected matrix is zero but raters disagree"
        )
    return 1.0 - numerator / denominator


def metrics_report(actual, predicted, averaging: str = "weighted") -> MetricsReport:
    """Full report (including kappa) straight from grade sequences."""
    cm = confusion(actual, predicted)
    report = classification_metrics(cm, averaging)
    report.qwk = quadratic_weighted_kappa(cm)
    return report
