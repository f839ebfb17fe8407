"""Long-tailed datasets: synthetic generators, imbalancing, CSV I/O."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np


class InfeasibleImbalanceError(ValueError):
    pass


class EmptyClassError(ValueError):
    pass


class CsvParseError(ValueError):
    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.line = line


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features must be (N, d) with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    @property
    def imbalance_factor(self) -> float:
        counts = self.class_counts
        return float(counts.max() / counts.min()) if counts.min() > 0 else math.inf

    def subset(self, rows, name=None) -> "LabeledDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return LabeledDataset(self.features[rows], self.labels[rows],
                              self.num_classes, name or self.name)

    def metadata(self) -> dict:
        counts = self.class_counts
        rho = self.imbalance_factor
        return {
            "name": self.name,
            "num_classes": int(self.num_classes),
            "dim": int(self.dim),
            "num_samples": int(len(self)),
            "class_counts": [int(c) for c in counts],
            "rho": rho if math.isfinite(rho) else None,
        }


@dataclass
class ClassIndex:
    rows: list[np.ndarray]

    @classmethod
    def build(cls, data: LabeledDataset) -> "ClassIndex":
        order = np.argsort(data.labels, kind="stable")
        bounds = np.cumsum(data.class_counts)[:-1]
        return cls(np.split(order, bounds))

    @property
    def num_classes(self) -> int:
        return len(self.rows)

    def counts(self) -> np.ndarray:
        return np.array([len(r) for r in self.rows])


# -- generators ---------------------------------------------------------------

@dataclass
class ToySpec:
    majority_centers: tuple = ((0.0, 1.0), (1.0, 0.0))
    minority_centers: tuple = ((0.0, -1.0), (-1.0, 0.0))
    std: float = 0.4
    n_majority: int = 1000
    n_minority: int = 50
    n_test_per_class: int = 1000

    @property
    def rho(self) -> float:
        return self.n_majority / self.n_minority

    @property
    def centers(self) -> np.ndarray:
        return np.array(list(self.majority_centers) + list(self.minority_centers), dtype=float)

    @property
    def minority_classes(self) -> list[int]:
        k = len(self.majority_centers)
        return list(range(k, k + len(self.minority_centers)))

    @property
    def majority_classes(self) -> list[int]:
        return list(range(len(self.majority_centers)))

    def adjacent_pairs(self) -> list[tuple[int, int]]:
        """(minority, nearest majority) class pairs by center distance."""
        c = self.centers
        pairs = []
        for m in self.minority_classes:
            d = [np.linalg.norm(c[m] - c[j]) for j in self.majority_classes]
            pairs.append((m, self.majority_classes[int(np.argmin(d))]))
        return pairs

    @classmethod
    def with_rho(cls, rho: float, n_majority: int = 1000, **kw) -> "ToySpec":
        return cls(n_majority=n_majority, n_minority=max(1, int(round(n_majority / rho))), **kw)


def _gaussian_classes(centers, std, counts, rng) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for c, (center, n) in enumerate(zip(centers, counts)):
        xs.append(center + std * rng.standard_normal((n, len(center))))
        ys.append(np.full(n, c))
    return np.concatenate(xs), np.concatenate(ys)


def make_toy(spec: ToySpec | None = None, seed: int = 0):
    """Four 2-D Gaussians: two large majority classes, two small minorities.

    Returns ``(train, test)``; the test set is balanced.
    """
    spec = spec or ToySpec()
    if spec.n_majority < 1 or spec.n_minority < 1 or spec.n_test_per_class < 1:
        raise ValueError("class sizes must be positive")
    rng = np.random.default_rng(seed)
    centers = spec.centers
    k = len(spec.majority_centers)
    counts = [spec.n_majority] * k + [spec.n_minority] * (len(centers) - k)
    x, y = _gaussian_classes(centers, spec.std, counts, rng)
    train = LabeledDataset(x, y, len(centers), f"toy-rho{spec.rho:g}")
    x, y = _gaussian_classes(centers, spec.std, [spec.n_test_per_class] * len(centers), rng)
    test = LabeledDataset(x, y, len(centers), "toy-test")
    return train, test


@dataclass
class BlobsSpec:
    """Gaussian clusters on a circle embedded in ``dim`` dimensions.

    Cluster ``c`` sits at ring position ``ring_order[c]``; neighbouring
    positions overlap, so imbalance pushes minority points into the
    neighbouring head classes.
    """
    num_classes: int = 20
    dim: int = 10
    radius: float = 4.0
    std: float = 0.75
    n_per_class: int = 500
    n_test_per_class: int = 200
    ring_order: list | None = None

    def positions(self) -> np.ndarray:
        if self.ring_order is None:
            return interleaved_ring(self.num_classes)
        order = np.asarray(self.ring_order)
        if sorted(order.tolist()) != list(range(self.num_classes)):
            raise ValueError("ring_order must be a permutation of the classes")
        return order

    def centers(self) -> np.ndarray:
        pos = self.positions()
        angle = 2 * np.pi * pos / self.num_classes
        centers = np.zeros((self.num_classes, self.dim))
        centers[:, 0] = self.radius * np.cos(angle)
        centers[:, 1] = self.radius * np.sin(angle)
        return centers


def interleaved_ring(num_classes: int) -> np.ndarray:
    # head classes alternate with tail classes around the circle: 0, C-1, 1, C-2, ...
    seq = []
    lo, hi = 0, num_classes - 1
    while lo <= hi:
        seq.append(lo)
        if lo != hi:
            seq.append(hi)
        lo, hi = lo + 1, hi - 1
    pos = np.empty(num_classes, dtype=np.int64)
    pos[np.array(seq)] = np.arange(num_classes)
    return pos


def make_blobs(spec: BlobsSpec | None = None, seed: int = 0):
    """Balanced ``(train, test)`` pair of the ring-of-blobs task."""
    spec = spec or BlobsSpec()
    rng = np.random.default_rng(seed)
    centers = spec.centers()
    x, y = _gaussian_classes(centers, spec.std, [spec.n_per_class] * spec.num_classes, rng)
    train = LabeledDataset(x, y, spec.num_classes, "blobs")
    x, y = _gaussian_classes(centers, spec.std, [spec.n_test_per_class] * spec.num_classes, rng)
    test = LabeledDataset(x, y, spec.num_classes, "blobs-test")
    return train, test


def exponential_counts(n0: int, rho: float, num_classes: int) -> np.ndarray:
    """``ceil(n0 * mu**i)`` with ``mu = rho ** (-1 / (C - 1))``."""
    if rho < 1:
        raise InfeasibleImbalanceError(f"rho must be >= 1, got {rho}")
    if num_classes == 1:
        return np.array([n0])
    mu = rho ** (-1.0 / (num_classes - 1))
    counts = np.array([math.ceil(n0 * mu ** i - 1e-9) for i in range(num_classes)])
    if n0 / rho < 1:
        raise InfeasibleImbalanceError(
            f"rho={rho} leaves tail class with {n0 / rho:.3g} < 1 samples")
    return counts


def exponential_imbalance(base: LabeledDataset, rho: float, seed: int = 0) -> LabeledDataset:
    """Subsample class ``i`` down to ``ceil(n0 * mu**i)`` rows, uniformly at random."""
    index = ClassIndex.build(base)
    n0 = int(index.counts()[0])
    targets = exponential_counts(n0, rho, base.num_classes)
    rng = np.random.default_rng(seed)
    keep = []
    for c, rows in enumerate(index.rows):
        take = min(int(targets[c]), len(rows))
        keep.append(np.sort(rng.choice(rows, size=take, replace=False)))
    out = base.subset(np.concatenate(keep))
    out.name = f"{base.name}-lt{rho:g}"
    return out


def class_balanced_resample(data: LabeledDataset, seed=0) -> Iterator[int]:
    """Infinite stream of row indices: uniform class, then uniform row within it."""
    index = ClassIndex.build(data)
    if np.any(index.counts() == 0):
        raise EmptyClassError("class-balanced sampling needs every class non-empty")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    while True:
        c = rng.integers(index.num_classes)
        rows = index.rows[c]
        yield int(rows[rng.integers(len(rows))])


def class_balanced_batch(index: ClassIndex, size: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorized draw of ``size`` rows with the same law as the stream above."""
    classes = rng.integers(index.num_classes, size=size)
    counts = index.counts()
    if np.any(counts == 0):
        raise EmptyClassError("class-balanced sampling needs every class non-empty")
    offsets = np.floor(rng.random(size) * counts[classes]).astype(np.int64)
    return np.array([index.rows[c][o] for c, o in zip(classes, offsets)], dtype=np.int64)


# -- CSV ----------------------------------------------------------------------

def save_csv(data: LabeledDataset, path, sidecar: bool = True) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{i}" for i in range(data.dim)] + ["label"])
        for x, y in zip(data.features, data.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])
    if sidecar:
        path.with_suffix(".json").write_text(json.dumps(data.metadata(), indent=2) + "\n")


def load_csv(path, num_classes: int | None = None, name: str | None = None) -> LabeledDataset:
    """Read ``f0,...,f{d-1},label`` rows.

    ``num_classes`` falls back to the JSON sidecar when present, then to
    ``max(label) + 1``.
    """
    path = Path(path)
    rows, labels = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1].strip() != "label":
            raise CsvParseError(path, 1, "header must end with a 'label' column")
        d = len(header) - 1
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise CsvParseError(path, lineno, f"expected {d + 1} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row[:-1]])
            except ValueError as e:
                raise CsvParseError(path, lineno, f"bad feature value ({e})") from None
            try:
                labels.append(int(row[-1]))
            except ValueError:
                raise CsvParseError(path, lineno, f"label {row[-1]!r} is not an integer") from None
            if labels[-1] < 0:
                raise CsvParseError(path, lineno, "negative label")
    meta_path = path.with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    if num_classes is None:
        num_classes = meta.get("num_classes") or (max(labels) + 1 if labels else 1)
    feats = np.array(rows, dtype=np.float64).reshape(len(rows), d)
    return LabeledDataset(feats, np.array(labels, dtype=np.int64), int(num_classes),
                          name or meta.get("name", path.stem))
