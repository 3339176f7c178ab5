"""Confusion-matrix metrics and ROC/AUC.

Labels passed here are anomaly indicators: 1 (or True) marks the positive
class. With the detector's encoding (+1 normal, 0 abnormal) use
:func:`abnormal_indicator` first. Undefined ratios are returned as ``None``.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import DegenerateTruthError, DimensionError


class ConfusionMatrix(NamedTuple):
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    def flipped(self):
        """The same counts with the other class taken as positive."""
        return ConfusionMatrix(tp=self.tn, tn=self.tp, fp=self.fn, fn=self.fp)


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    mse: Optional[float] = None


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # thresholds[k] produced point k; the first is +inf
    auc: float

    @property
    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def abnormal_indicator(labels):
    """Map detector labels (+1 normal, 0 abnormal) to 1 = abnormal."""
    return (np.asarray(labels) == 0).astype(np.int64)


def _binary(x, name):
    a = np.asarray(x)
    if a.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional")
    if not np.isin(a, (0, 1)).all():
        raise ValueError(f"{name} must be binary (0/1)")
    return a.astype(bool)


def confusion(predicted, truth):
    p = _binary(predicted, "predicted")
    t = _binary(truth, "truth")
    if p.shape != t.shape:
        raise DimensionError(f"predicted has {p.size} labels, truth has {t.size}")
    return ConfusionMatrix(
        tp=int(np.sum(p & t)), tn=int(np.sum(~p & ~t)),
        fp=int(np.sum(p & ~t)), fn=int(np.sum(~p & t)),
    )


def metrics(cm, errors=None):
    """Accuracy, precision, recall, F1 from counts; MSE as the mean of ``errors``."""
    total = cm.total
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    accuracy = (cm.tp + cm.tn) / total
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp else None
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn else None
    if precision is None or recall is None:
        f1 = None
    elif precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    mse = None if errors is None else float(np.mean(np.asarray(errors, dtype=np.float64)))
    return Metrics(accuracy, precision, recall, f1, mse)


def roc_auc(scores, truth):
    """ROC over every distinct score threshold; area by the trapezoid rule.

    Higher scores mean "more anomalous". Equal scores are grouped into one
    threshold step, which gives tied positive/negative pairs half credit.
    """
    s = np.asarray(scores, dtype=np.float64)
    t = _binary(truth, "truth")
    if s.shape != t.shape:
        raise DimensionError(f"{s.size} scores but {t.size} labels")
    P = int(t.sum())
    N = t.size - P
    if P == 0 or N == 0:
        raise DegenerateTruthError("truth must contain both classes")
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    t_sorted = t[order]
    tp = np.cumsum(t_sorted)
    fp = np.cumsum(~t_sorted)
    # last index of every group of equal scores
    last = np.nonzero(np.diff(s_sorted) != 0)[0]
    last = np.append(last, s.size - 1)
    TP = np.concatenate([[0], tp[last]]).astype(np.int64)
    FP = np.concatenate([[0], fp[last]]).astype(np.int64)
    thresholds = np.concatenate([[np.inf], s_sorted[last]])
    # trapezoids summed in integer counts, one division at the end
    area2 = int(np.sum(np.diff(FP) * (TP[1:] + TP[:-1])))
    auc = area2 / (2 * P * N)
    return RocCurve(FP / N, TP / P, thresholds, auc)
