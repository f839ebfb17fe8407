"""Evaluation metrics: top-1, class-wise and many/medium/few accuracy."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .confusion import ConfusionMatrix, confusion_histogram, confusion_matrix
from .data import LabeledDataset
from .nn import MlpClassifier

DEFAULT_THRESHOLDS = (100, 20)


def subgroups(train_counts, thresholds=DEFAULT_THRESHOLDS) -> dict[str, list[int]]:
    """Split classes by training count: many (> hi), medium (lo..hi), few (< lo)."""
    hi, lo = thresholds
    counts = np.asarray(train_counts)
    return {
        "many": [int(c) for c in np.flatnonzero(counts > hi)],
        "medium": [int(c) for c in np.flatnonzero((counts >= lo) & (counts <= hi))],
        "few": [int(c) for c in np.flatnonzero(counts < lo)],
    }


def group_confusion(matrix, group_size: int) -> np.ndarray:
    """Sum ``group_size x group_size`` blocks; a trailing partial group is kept."""
    counts = matrix.counts if isinstance(matrix, ConfusionMatrix) else np.asarray(matrix)
    C = counts.shape[0]
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    starts = np.arange(0, C, group_size)
    return np.add.reduceat(np.add.reduceat(counts, starts, axis=0), starts, axis=1)


@dataclass
class MetricsReport:
    top1: float
    per_class_acc: list
    subgroup_acc: dict
    subgroup_classes: dict
    confusion: ConfusionMatrix
    confusion_hist: list
    grouped_confusion: list | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "top1": self.top1,
            "per_class_acc": self.per_class_acc,
            "subgroup_acc": self.subgroup_acc,
            "subgroup_classes": self.subgroup_classes,
            "confusion": self.confusion.counts.tolist(),
            "confusion_hist": self.confusion_hist,
            "grouped_confusion": self.grouped_confusion,
            "extra": self.extra,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def metrics_from_confusion(cm: ConfusionMatrix, train_counts,
                           thresholds=DEFAULT_THRESHOLDS, group_size=None) -> MetricsReport:
    """Everything in a :class:`MetricsReport` is a function of the confusion matrix."""
    counts = cm.counts
    total = counts.sum()
    top1 = float(np.trace(counts) / total) if total else float("nan")
    recall = cm.recall()
    per_class = [None if np.isnan(r) else float(r) for r in recall]
    groups = subgroups(train_counts, thresholds)
    sub = {}
    for name, members in groups.items():
        vals = [per_class[c] for c in members if per_class[c] is not None]
        sub[name] = float(np.mean(vals)) if vals else None
    grouped = group_confusion(cm, group_size).tolist() if group_size else None
    return MetricsReport(top1, per_class, sub, groups, cm, confusion_histogram(cm), grouped)


def evaluate(model: MlpClassifier, test: LabeledDataset, train_counts,
             subgroup_thresholds=DEFAULT_THRESHOLDS, group_size=None) -> MetricsReport:
    return metrics_from_confusion(confusion_matrix(model, test), train_counts,
                                  subgroup_thresholds, group_size)


def minority_recall(cm: ConfusionMatrix, minority_classes) -> float:
    r = cm.recall()
    return float(np.mean([r[c] for c in minority_classes]))


def target_confusion_sum(cm: ConfusionMatrix, pairs) -> int:
    """Sum of ``C[true, pred]`` over the given (true, pred) pairs."""
    return int(sum(cm.counts[t, p] for t, p in pairs))
