"""Confusion matrices and the accumulated bag of confusion pairs."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import ClassIndex, EmptyClassError, LabeledDataset
from .nn import MlpClassifier, ShapeError, predict


def confusion_counts(truths, preds, num_classes: int) -> np.ndarray:
    truths = np.asarray(truths, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    if truths.shape != preds.shape:
        raise ShapeError("truths and preds differ in length")
    for arr in (truths, preds):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ShapeError(f"class out of range [0, {num_classes})")
    flat = np.bincount(truths * num_classes + preds, minlength=num_classes * num_classes)
    return flat.reshape(num_classes, num_classes)


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns are predictions."""
    counts: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def off_diagonal(self) -> np.ndarray:
        out = self.counts.copy()
        np.fill_diagonal(out, 0)
        return out

    def recall(self) -> np.ndarray:
        rows = self.counts.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, np.diag(self.counts) / np.maximum(rows, 1), np.nan)

    def to_csv(self, path) -> None:
        lines = [",".join(str(int(v)) for v in row) for row in self.counts]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "ConfusionMatrix":
        rows = [line.split(",") for line in Path(path).read_text().split("\n") if line.strip()]
        return cls(np.array([[int(v) for v in r] for r in rows], dtype=np.int64))


def confusion_matrix(model: MlpClassifier, data: LabeledDataset) -> ConfusionMatrix:
    if model.num_classes != data.num_classes:
        raise ShapeError(
            f"model predicts {model.num_classes} classes, data has {data.num_classes}")
    preds = predict(model, data.features) if len(data) else np.zeros(0, dtype=np.int64)
    return ConfusionMatrix(confusion_counts(data.labels, preds, data.num_classes))


def confusion_histogram(matrix) -> list:
    """All off-diagonal confusion values, largest first."""
    counts = matrix.counts if isinstance(matrix, ConfusionMatrix) else np.asarray(matrix)
    mask = ~np.eye(counts.shape[0], dtype=bool)
    return sorted(counts[mask].tolist(), reverse=True)


@dataclass
class ConfusionPairBag:
    """Multiset of (true class, predicted class) misclassification pairs.

    Stored densely as a ``C x C`` count matrix with an empty diagonal.
    ``decay`` (off by default) turns the bag into an exponentially
    forgetting tally that :meth:`end_epoch` shrinks.
    """
    num_classes: int
    decay: float | None = None
    weighting: str = "frequency"
    counts: np.ndarray = field(init=False)
    reads: int = field(default=0, init=False)

    def __post_init__(self):
        if self.weighting not in ("frequency", "support"):
            raise ValueError("weighting must be 'frequency' or 'support'")
        if self.decay is not None and not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must lie in (0, 1]")
        dtype = np.float64 if self.decay is not None else np.int64
        self.counts = np.zeros((self.num_classes, self.num_classes), dtype=dtype)

    @property
    def total(self):
        return self.counts.sum().item()

    @property
    def per_true_total(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def multiplicity(self) -> dict:
        ts, ms = np.nonzero(self.counts)
        return {(int(t), int(m)): self.counts[t, m].item() for t, m in zip(ts, ms)}

    def record_batch(self, truths, preds) -> int:
        """Add every misclassified ``(truth, pred)``; returns how many were added."""
        tally = confusion_counts(truths, preds, self.num_classes)
        np.fill_diagonal(tally, 0)
        self.counts += tally
        return int(tally.sum())

    def end_epoch(self) -> None:
        if self.decay is not None:
            self.counts *= self.decay

    def sample_confused_class(self, c_t: int, rng: np.random.Generator) -> int:
        """Draw a class the model has confused ``c_t`` with.

        Falls back to a uniform draw over the other classes when nothing has
        been recorded for ``c_t`` yet.
        """
        self.reads += 1
        C = self.num_classes
        if C < 2:
            raise ValueError("need at least two classes")
        row = self.counts[c_t]
        if row.sum() > 0:
            w = row.astype(np.float64)
            if self.weighting == "support":
                w = (w > 0).astype(np.float64)
            cdf = np.cumsum(w)
            return int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        m = int(rng.integers(C - 1))
        return m + 1 if m >= c_t else m

    def to_json(self) -> str:
        return json.dumps({f"{t},{m}": v for (t, m), v in self.multiplicity.items()},
                          indent=1, sort_keys=False)

    @classmethod
    def from_json(cls, text: str, num_classes: int, decay: float | None = None,
                  weighting: str = "frequency") -> "ConfusionPairBag":
        bag = cls(num_classes, decay=decay, weighting=weighting)
        for key, v in json.loads(text).items():
            t, m = (int(s) for s in key.split(","))
            bag.counts[t, m] = v
        return bag


@dataclass
class CPBatch:
    rows_t: np.ndarray
    classes_t: np.ndarray
    rows_m: np.ndarray
    classes_m: np.ndarray

    def __len__(self):
        return self.classes_t.shape[0]

    def pairs(self, data: LabeledDataset) -> list:
        return [((data.features[a], int(ca)), (data.features[b], int(cb)))
                for a, ca, b, cb in zip(self.rows_t, self.classes_t, self.rows_m, self.classes_m)]


def build_cp_batch(bag: ConfusionPairBag, index: ClassIndex, size: int,
                   rng: np.random.Generator) -> CPBatch:
    """Uniform true classes, bag-driven partner classes, rows drawn with replacement."""
    counts = index.counts()
    if np.any(counts == 0):
        raise EmptyClassError("every class needs at least one sample")
    C = index.num_classes
    c_t = rng.integers(C, size=size)
    c_m = np.array([bag.sample_confused_class(int(c), rng) for c in c_t], dtype=np.int64)
    rows_t = np.array([index.rows[c][rng.integers(counts[c])] for c in c_t], dtype=np.int64)
    rows_m = np.array([index.rows[c][rng.integers(counts[c])] for c in c_m], dtype=np.int64)
    return CPBatch(rows_t, c_t.astype(np.int64), rows_m, c_m)
