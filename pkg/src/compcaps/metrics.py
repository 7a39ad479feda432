"""Confusion matrices, precision/recall, ROC points, a pooled t statistic and
relative improvement rates."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError, LabelError, ParameterError

CRITICAL_T = 3.17


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class."""

    counts: np.ndarray

    def __post_init__(self):
        c = self.counts
        if c.ndim != 2 or c.shape[0] != c.shape[1] or np.any(c < 0):
            raise ParameterError("confusion counts must be a non-negative square matrix")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total)

    def row_percent(self) -> np.ndarray:
        """Rows scaled to 100; classes with no samples stay at zero."""
        rows = self.counts.sum(axis=1, keepdims=True).astype(float)
        return np.divide(100.0 * self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    def to_csv(self, labels=None, percent: bool = False) -> str:
        k = self.counts.shape[0]
        labels = list(labels) if labels is not None else [str(i) for i in range(k)]
        data = self.row_percent() if percent else self.counts
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred", *labels])
        for name, row in zip(labels, data):
            w.writerow([name, *[f"{v:.4f}" if percent else int(v) for v in row]])
        return buf.getvalue()


def confusion(y_true, y_pred, k: int) -> ConfusionMatrix:
    t, p = np.asarray(y_true), np.asarray(y_pred)
    if t.shape != p.shape or t.ndim != 1:
        raise DimensionError("y_true and y_pred must be 1-D and equally long")
    if t.size == 0:
        raise DimensionError("a confusion matrix needs at least one sample")
    if np.any((t < 0) | (t >= k)) or np.any((p < 0) | (p >= k)):
        raise LabelError(f"labels must lie in [0, {k})")
    m = np.zeros((k, k), dtype=np.int64)
    np.add.at(m, (t.astype(int), p.astype(int)), 1)
    return ConfusionMatrix(m)


@dataclass(frozen=True)
class MetricsReport:
    precision: np.ndarray
    recall: np.ndarray
    accuracy: float
    undefined_precision: tuple[int, ...] = field(default_factory=tuple)
    undefined_recall: tuple[int, ...] = field(default_factory=tuple)

    @property
    def macro_precision(self) -> float:
        return float(self.precision.mean())

    @property
    def macro_recall(self) -> float:
        return float(self.recall.mean())

    def to_csv(self, labels=None) -> str:
        k = len(self.precision)
        labels = list(labels) if labels is not None else [str(i) for i in range(k)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "precision", "recall", "precision_undefined", "recall_undefined"])
        for i, name in enumerate(labels):
            w.writerow([name, f"{self.precision[i]:.6f}", f"{self.recall[i]:.6f}",
                        int(i in self.undefined_precision), int(i in self.undefined_recall)])
        w.writerow(["macro", f"{self.macro_precision:.6f}", f"{self.macro_recall:.6f}", "", ""])
        w.writerow(["accuracy", f"{self.accuracy:.6f}", "", "", ""])
        return buf.getvalue()


def precision_recall(m: ConfusionMatrix) -> MetricsReport:
    """Per-class TP/(TP+FP) and TP/(TP+FN); a zero denominator yields 0 and is flagged."""
    c = m.counts.astype(float)
    tp = np.diag(c)
    col, row = c.sum(axis=0), c.sum(axis=1)
    prec = np.divide(tp, col, out=np.zeros_like(tp), where=col > 0)
    rec = np.divide(tp, row, out=np.zeros_like(tp), where=row > 0)
    return MetricsReport(prec, rec, m.accuracy,
                         tuple(int(i) for i in np.flatnonzero(col == 0)),
                         tuple(int(i) for i in np.flatnonzero(row == 0)))


def roc_points(scores, y_true, k: int) -> list[tuple[float, float]]:
    """One-vs-rest ROC for class ``k``.

    ``scores`` is (samples, classes) or a 1-D score for class ``k``.  The
    threshold sweeps the distinct scores from high to low; a sample is called
    positive when its score is >= the threshold.
    """
    s = np.asarray(scores, dtype=float)
    if s.ndim == 2:
        s = s[:, k]
    pos = np.asarray(y_true) == k
    if s.shape != pos.shape:
        raise DimensionError("scores and labels differ in length")
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise LabelError("ROC needs both positive and negative samples for the class")
    pts = [(0.0, 0.0)]
    for thr in np.unique(s)[::-1]:
        called = s >= thr
        pts.append((float(np.sum(called & ~pos) / n_neg), float(np.sum(called & pos) / n_pos)))
    return pts


def auc(points) -> float:
    """Trapezoid area under (FPR, TPR) points."""
    x = np.array([p[0] for p in points])
    y = np.array([p[1] for p in points])
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2))


@dataclass(frozen=True)
class TTestResult:
    t: float
    sd_pooled: float
    n: int
    significant: bool
    infinite: bool = False


def t_test(x1, x2, critical: float = CRITICAL_T) -> TTestResult:
    """t = (mean1 - mean2) / sqrt((SD1^2 + SD2^2) / 2) with sample SDs (ddof=1).

    ``significant`` is the one-sided strict test ``t > critical``.
    """
    a, b = np.asarray(x1, dtype=float), np.asarray(x2, dtype=float)
    if a.ndim != 1 or a.shape != b.shape:
        raise DimensionError("t_test needs two equally sized 1-D samples")
    if a.size < 2:
        raise DimensionError("t_test needs at least two observations per sample")
    sd = math.sqrt((a.var(ddof=1) + b.var(ddof=1)) / 2)
    diff = float(a.mean() - b.mean())
    if sd == 0:
        if diff == 0:
            return TTestResult(0.0, 0.0, a.size, False)
        t = math.copysign(math.inf, diff)
        return TTestResult(t, 0.0, a.size, t > critical, infinite=True)
    t = diff / sd
    return TTestResult(t, sd, a.size, t > critical)


def is_significant(t: float, critical: float = CRITICAL_T) -> bool:
    return t > critical


def relative_improvement(proposed: float, related: float) -> float:
    """Percentage improvement of ``proposed`` over ``related``, rounded to 2 decimals."""
    if related <= 0:
        raise DomainError("related accuracy must be positive")
    return round((proposed - related) / related * 100.0, 2)


def compare(proposed: float, related: dict) -> list[tuple[str, float, float]]:
    """(name, related accuracy, relative improvement) rows."""
    return [(name, float(acc), relative_improvement(proposed, acc)) for name, acc in related.items()]
