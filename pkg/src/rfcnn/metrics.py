"""Multi-label evaluation: macro PR-AUC and two F-score conventions.

PR-AUC per class is the average precision, i.e. the step-wise sum
AP = sum_k (R_k - R_{k-1}) * P_k over descending score thresholds, with
tied scores collapsed into one rank group (so any strictly monotone
rescaling of the scores leaves the value unchanged). Entries whose mask
marks them unknown are excluded from everything.

Two F-score conventions are reported: the classical per-class F1 of the
positive class, and the average of the positive-class and negative-class
F1 per class; both are macro-averaged.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedMetricError

logger = logging.getLogger(__name__)


@dataclass
class PredictionSet:
    scores: np.ndarray  # (n_samples, n_classes), probabilities in [0, 1]
    labels: np.ndarray  # (n_samples, n_classes), {0, 1}
    mask: np.ndarray | None = None  # True where the label is known

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.scores.ndim != 2 or self.labels.shape != self.scores.shape:
            raise ValueError("scores and labels must be matching 2-D matrices")
        if np.any(self.scores < 0.0) or np.any(self.scores > 1.0):
            raise ValueError("scores must lie in [0, 1]")
        if not np.all(np.isin(self.labels, (0, 1))):
            raise ValueError("labels must be 0 or 1")
        if self.mask is None:
            self.mask = np.ones(self.scores.shape, dtype=bool)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.scores.shape:
                raise ValueError("mask shape must match scores shape")

    @property
    def n_classes(self) -> int:
        return self.scores.shape[1]


@dataclass
class MetricsReport:
    per_class_ap: list[float | None]
    macro_pr_auc: float
    macro_f1_classical: float
    macro_f1_posneg: float
    threshold: float

    def as_rows(self, run_id: str, epoch: int, rf: int, arch: str) -> list[list]:
        """Long-format CSV rows: run_id, epoch, rf, arch, metric_name, value."""
        rows = [
            [run_id, epoch, rf, arch, "macro_pr_auc", self.macro_pr_auc],
            [run_id, epoch, rf, arch, "f1_classical", self.macro_f1_classical],
            [run_id, epoch, rf, arch, "f1_posneg", self.macro_f1_posneg],
        ]
        return rows


CSV_HEADER = ["run_id", "epoch", "rf", "arch", "metric_name", "value"]


def write_metric_rows(path, rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        writer.writerows(rows)


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """AP of one class from 1-D scores and binary labels (no masking here)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ValueError("average_precision expects matching 1-D arrays")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise UndefinedMetricError("no positive labels; AP undefined")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    l = labels[order].astype(np.float64)
    # indices of the last element of each tied-score group
    group_end = np.flatnonzero(np.diff(s) != 0)
    group_end = np.append(group_end, s.size - 1)
    tp = np.cumsum(l)[group_end]
    total = group_end + 1.0
    precision = tp / total
    recall = tp / n_pos
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(((recall - prev_recall) * precision).sum())


def _known_class(preds: PredictionSet, c: int):
    known = preds.mask[:, c]
    return preds.scores[known, c], preds.labels[known, c]


def per_class_average_precision(preds: PredictionSet) -> list[float | None]:
    """AP per class; None where the class has no known positives."""
    out: list[float | None] = []
    for c in range(preds.n_classes):
        scores, labels = _known_class(preds, c)
        if labels.size == 0 or labels.sum() == 0:
            logger.warning("class %d has no known positives; excluded from macro AP", c)
            out.append(None)
        else:
            out.append(average_precision(scores, labels))
    return out


def macro_pr_auc(preds: PredictionSet) -> float:
    values = [ap for ap in per_class_average_precision(preds) if ap is not None]
    if not values:
        raise UndefinedMetricError("no class has a defined average precision")
    return float(np.mean(values))


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def f1_classical(preds: PredictionSet, threshold: float = 0.5) -> float:
    """Per-class F1 of the positive class at the threshold, macro-averaged."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    values = []
    for c in range(preds.n_classes):
        scores, labels = _known_class(preds, c)
        pred = scores >= threshold
        tp = int(np.sum(pred & (labels == 1)))
        fp = int(np.sum(pred & (labels == 0)))
        fn = int(np.sum(~pred & (labels == 1)))
        values.append(_f1(tp, fp, fn))
    return float(np.mean(values))


def f1_posneg(preds: PredictionSet, threshold: float = 0.5) -> float:
    """Mean of positive-class and negative-class F1 per class, macro-averaged."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    values = []
    for c in range(preds.n_classes):
        scores, labels = _known_class(preds, c)
        pred = scores >= threshold
        tp = int(np.sum(pred & (labels == 1)))
        fp = int(np.sum(pred & (labels == 0)))
        fn = int(np.sum(~pred & (labels == 1)))
        tn = int(np.sum(~pred & (labels == 0)))
        pos = _f1(tp, fp, fn)
        neg = _f1(tn, fn, fp)  # swap roles: negatives are the target
        values.append(0.5 * (pos + neg))
    return float(np.mean(values))


def evaluate(preds: PredictionSet, threshold: float = 0.5) -> MetricsReport:
    per_class = per_class_average_precision(preds)
    defined = [ap for ap in per_class if ap is not None]
    if not defined:
        raise UndefinedMetricError("no class has a defined average precision")
    return MetricsReport(
        per_class_ap=per_class,
        macro_pr_auc=float(np.mean(defined)),
        macro_f1_classical=f1_classical(preds, threshold),
        macro_f1_posneg=f1_posneg(preds, threshold),
        threshold=threshold,
    )
