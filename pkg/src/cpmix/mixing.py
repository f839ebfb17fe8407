"""Mixup interpolation with imbalance-aware label weights."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ShapeError, one_hot


@dataclass(frozen=True)
class MixConfig:
    alpha: float = 1.0
    t: float = 0.5
    gamma_cp: float = 1.0
    gamma_mix: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not 0.0 <= self.t <= 1.0:
            raise ValueError(f"t must lie in [0, 1], got {self.t}")
        if self.gamma_cp < 0 or self.gamma_mix < 0:
            raise ValueError("regularization weights must be >= 0")


@dataclass
class MixedExample:
    x_mix: np.ndarray
    y_mix: np.ndarray
    lambda_used: float
    class_t: int
    class_m: int


# -- Beta(alpha, alpha) via two gamma variates ---------------------------------

def _log_gamma_variates(shape: float, rng: np.random.Generator, size: int) -> np.ndarray:
    """log of Gamma(shape, 1) draws (Marsaglia & Tsang squeeze/reject).

    For shape < 1 draw Gamma(shape + 1) and multiply by ``U**(1/shape)``;
    working in logs keeps tiny shapes from underflowing to zero.
    """
    boost = shape < 1.0
    a = shape + 1.0 if boost else shape
    d = a - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty(size)
    todo = np.arange(size)
    while todo.size:
        n = todo.size
        z = rng.standard_normal(n)
        u = rng.random(n)
        v = 1.0 + c * z
        ok = v > 0
        v3 = np.where(ok, v, 1.0) ** 3
        with np.errstate(divide="ignore"):
            log_u = np.log(u)
        accept = ok & (log_u < 0.5 * z * z + d - d * v3 + d * np.log(v3))
        out[todo[accept]] = np.log(d) + np.log(v3[accept])
        todo = todo[~accept]
    if boost:
        u = rng.random(size)
        # 1 - u lies in (0, 1], so the log is finite
        out += np.log1p(-u) / shape
    return out


def sample_lambdas(alpha: float, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` independent Beta(alpha, alpha) draws as ``g1 / (g1 + g2)``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    lg1 = _log_gamma_variates(alpha, rng, size)
    lg2 = _log_gamma_variates(alpha, rng, size)
    # g1/(g1+g2) = sigmoid(lg1 - lg2)
    diff = lg1 - lg2
    e = np.exp(-np.abs(diff))
    return np.where(diff >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sample_lambda(alpha: float, rng: np.random.Generator) -> float:
    return float(sample_lambdas(alpha, rng, 1)[0])


# -- mixing functions ---------------------------------------------------------

def mix_inputs(x1, x2, lam):
    """Convex combination ``lam * x1 + (1 - lam) * x2``.

    ``lam`` may be a scalar or one weight per row of a batch.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape != x2.shape:
        raise ShapeError(f"cannot mix shapes {x1.shape} and {x2.shape}")
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim == 1 and x1.ndim == 2:
        lam = lam[:, None]
    return lam * x1 + (1.0 - lam) * x2


def label_lambda(lam, t, n_y1, n_y2):
    """Label weight on ``y1``: ``t*lam + (1-t) * n_y2 / (n_y1 + n_y2)``.

    At ``t = 1`` this is plain mixup; at ``t = 0`` the rarer class receives
    the larger share of the label regardless of ``lam``.
    """
    n_y1 = np.asarray(n_y1, dtype=np.float64)
    n_y2 = np.asarray(n_y2, dtype=np.float64)
    if np.any(n_y1 < 1) or np.any(n_y2 < 1):
        raise ValueError("class counts must be >= 1")
    out = t * np.asarray(lam, dtype=np.float64) + (1.0 - t) * n_y2 / (n_y1 + n_y2)
    return float(out) if out.ndim == 0 else out


def mix_labels(y1, y2, lambda_y, num_classes: int) -> np.ndarray:
    """``lambda_y * e_y1 + (1 - lambda_y) * e_y2`` (rows for array input)."""
    lam = np.asarray(lambda_y, dtype=np.float64)
    e1 = one_hot(y1, num_classes)
    e2 = one_hot(y2, num_classes)
    if lam.ndim == 1:
        lam = lam[:, None]
    out = lam * e1 + (1.0 - lam) * e2
    # y1 == y2 must give an exact one-hot
    same = np.asarray(y1) == np.asarray(y2)
    if np.any(same):
        out = np.where(same[..., None] if out.ndim == 2 else same, e1, out)
    return out


def cp_mix_pair(x1, y1, x2, y2, class_counts, config: MixConfig,
                rng: np.random.Generator) -> MixedExample:
    """Mix one pair; the single Beta draw drives both the input and the label weight."""
    counts = np.asarray(class_counts)
    C = counts.shape[0]
    if not (0 <= y1 < C and 0 <= y2 < C):
        raise ShapeError("class out of range")
    lam = sample_lambda(config.alpha, rng)
    lam_y = label_lambda(lam, config.t, counts[y1], counts[y2])
    return MixedExample(mix_inputs(x1, x2, lam), mix_labels(y1, y2, lam_y, C),
                        lam, int(y1), int(y2))


def cp_mix_batch(x1, y1, x2, y2, class_counts, config: MixConfig,
                 rng: np.random.Generator):
    """Vectorized :func:`cp_mix_pair` over rows.

    All lambdas come from one batched draw, so the RNG stream differs from
    a loop of per-pair calls. Returns ``(x_mix, y_mix, lambdas)``.
    """
    y1 = np.asarray(y1, dtype=np.int64)
    y2 = np.asarray(y2, dtype=np.int64)
    counts = np.asarray(class_counts)
    lam = sample_lambdas(config.alpha, rng, y1.shape[0])
    lam_y = label_lambda(lam, config.t, counts[y1], counts[y2])
    return (mix_inputs(x1, x2, lam),
            mix_labels(y1, y2, np.atleast_1d(lam_y), counts.shape[0]), lam)


def vanilla_mix_batch(x, y, num_classes: int, alpha: float,
                      rng: np.random.Generator):
    """Pair each row with a random permutation of the batch; label weight = lam."""
    y = np.asarray(y, dtype=np.int64)
    perm = rng.permutation(y.shape[0])
    lam = sample_lambdas(alpha, rng, y.shape[0])
    return mix_inputs(x, x[perm], lam), mix_labels(y, y[perm], lam, num_classes), lam
