"""Small fully connected classifiers with hand-derived gradients.

Weights are stored input-major: layer ``l`` maps ``h @ W[l] + b[l]`` with
``W[l].shape == (dims[l], dims[l+1])``. Hidden layers use ReLU, the output
layer is linear (logits).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    pass


class NumericInputError(ValueError):
    pass


class InvalidCountsError(ValueError):
    pass


@dataclass
class MlpClassifier:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        dims = self.layer_dims
        if len(dims) < 2 or any(int(d) < 1 for d in dims):
            raise ShapeError(f"layer_dims must hold >= 2 positive ints, got {dims}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ShapeError("need one weight matrix and one bias per layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[l], dims[l + 1]) or b.shape != (dims[l + 1],):
                raise ShapeError(f"layer {l}: got W{w.shape}, b{b.shape}")

    @classmethod
    def init(cls, layer_dims, rng: np.random.Generator) -> "MlpClassifier":
        """Glorot-uniform weights, zero biases."""
        dims = [int(d) for d in layer_dims]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(dims, weights, biases)

    @classmethod
    def zeros(cls, layer_dims) -> "MlpClassifier":
        dims = [int(d) for d in layer_dims]
        return cls(
            dims,
            [np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
            [np.zeros(b) for b in dims[1:]],
        )

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in the canonical order W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def num_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "MlpClassifier":
        return MlpClassifier(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )


def _as_batch(model: MlpClassifier, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0]:
        raise ShapeError(
            f"expected input dim {model.layer_dims[0]}, got shape {np.shape(x)}"
        )
    return x, single


def _forward_cache(model: MlpClassifier, x: np.ndarray):
    # returns the input to every layer plus the final logits
    acts = [x]
    h = x
    last = model.num_layers - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        h = z if l == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts


def forward(model: MlpClassifier, x) -> np.ndarray:
    """Logits for a single feature vector ``(d,)`` or a batch ``(n, d)``."""
    xb, single = _as_batch(model, x)
    logits = _forward_cache(model, xb)[-1]
    return logits[0] if single else logits


def predict(model: MlpClassifier, x):
    """Argmax class; ties go to the lowest index (``np.argmax`` semantics)."""
    logits = forward(model, x)
    return int(np.argmax(logits)) if logits.ndim == 1 else np.argmax(logits, axis=1)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    m = np.max(z, axis=-1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ShapeError(f"labels out of range [0, {num_classes})")
    out = np.zeros(labels.shape + (num_classes,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def _check_logits(logits):
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NumericInputError("non-finite logits")
    return logits


def _as_target(target, logits: np.ndarray) -> np.ndarray:
    target = np.asarray(target)
    if target.ndim == logits.ndim - 1 and np.issubdtype(target.dtype, np.integer):
        return one_hot(target, logits.shape[-1])
    target = target.astype(np.float64)
    if target.shape != logits.shape:
        raise ShapeError(f"target shape {target.shape} != logits shape {logits.shape}")
    return target


def cross_entropy_loss(logits, target):
    """Soft-label cross-entropy.

    ``target`` is either a probability vector (or matrix, one row per
    sample) or an integer class (array). Returns ``(loss, dloss/dlogits)``;
    for a batch the loss is a per-row vector.
    """
    logits = _check_logits(logits)
    target = _as_target(target, logits)
    logp = log_softmax(logits)
    loss = -np.sum(target * logp, axis=-1)
    grad = np.exp(logp) - target
    return loss, grad


def _log_counts(class_counts, num_classes: int) -> np.ndarray:
    counts = np.asarray(class_counts, dtype=np.float64)
    if counts.shape != (num_classes,):
        raise ShapeError(f"need {num_classes} class counts, got shape {counts.shape}")
    if np.any(counts < 1):
        raise InvalidCountsError("every class count must be >= 1")
    return np.log(counts)


def balanced_softmax_loss(logits, target, class_counts):
    """Cross-entropy on logits shifted by ``log n_c``.

    With a hard label ``y`` this is ``-log(n_y e^{z_y} / sum_c n_c e^{z_c})``.
    Soft targets are accepted and weight the shifted log-softmax terms.
    """
    logits = _check_logits(logits)
    shifted = logits + _log_counts(class_counts, logits.shape[-1])
    return cross_entropy_loss(shifted, target)


LOSSES = ("cross_entropy", "balanced_softmax")


def loss_and_logit_grad(logits, targets, loss_kind: str, class_counts=None):
    if loss_kind == "cross_entropy":
        if class_counts is not None:
            raise ValueError("class_counts only apply to balanced_softmax")
        return cross_entropy_loss(logits, targets)
    if loss_kind == "balanced_softmax":
        if class_counts is None:
            raise ValueError("balanced_softmax needs class_counts")
        return balanced_softmax_loss(logits, targets, class_counts)
    raise ValueError(f"unknown loss kind {loss_kind!r}; expected one of {LOSSES}")


@dataclass
class BatchGrad:
    grads: list[np.ndarray]
    loss: float
    logits: np.ndarray

    @property
    def predictions(self) -> np.ndarray:
        return np.argmax(self.logits, axis=1)


def backward(model: MlpClassifier, x, targets, loss_kind="cross_entropy",
             class_counts=None) -> BatchGrad:
    """Gradient of the batch-mean loss with respect to every parameter.

    ``targets`` are integer labels or a soft-label matrix. The returned
    gradient list follows ``model.params()`` order. The model is not touched.
    """
    xb, _ = _as_batch(model, x)
    if xb.shape[0] == 0:
        raise ShapeError("empty batch")
    acts = _forward_cache(model, xb)
    logits = acts[-1]
    losses, dlogits = loss_and_logit_grad(logits, targets, loss_kind, class_counts)
    n = xb.shape[0]
    delta = dlogits / n
    grads: list[np.ndarray] = [None] * (2 * model.num_layers)  # type: ignore[list-item]
    for l in range(model.num_layers - 1, -1, -1):
        grads[2 * l] = acts[l].T @ delta
        grads[2 * l + 1] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.weights[l].T) * (acts[l] > 0)
    return BatchGrad(grads, float(np.mean(losses)), logits)


# -- optimizers ---------------------------------------------------------------

@dataclass
class OptimizerState:
    kind: str = "sgd_momentum"
    learning_rate: float = 0.1
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    buffers: list = field(default_factory=list)
    second_moments: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd_momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


def optimizer_step(state: OptimizerState, params: list[np.ndarray],
                   grads: list[np.ndarray], lr: float | None = None):
    """Update ``params`` in place.

    ``params`` is usually ``model.params()`` (or a slice of it when some
    layers are frozen). Weight decay is an L2 term added to the gradient.
    SGD follows the ``v = m*v + g; p -= lr*v`` convention.
    """
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"param shape {p.shape} != grad shape {g.shape}")
    if not state.buffers:
        state.buffers = [np.zeros_like(p) for p in params]
        if state.kind == "adam":
            state.second_moments = [np.zeros_like(p) for p in params]
    if any(b.shape != p.shape for b, p in zip(state.buffers, params)):
        raise ShapeError("optimizer buffers do not match parameter shapes")
    lr = state.learning_rate if lr is None else lr
    state.step_count += 1
    for i, (p, g) in enumerate(zip(params, grads)):
        if state.weight_decay:
            g = g + state.weight_decay * p
        if state.kind == "sgd_momentum":
            buf = state.buffers[i]
            buf *= state.momentum
            buf += g
            p -= lr * buf
        else:
            m, v = state.buffers[i], state.second_moments[i]
            m *= state.beta1
            m += (1 - state.beta1) * g
            v *= state.beta2
            v += (1 - state.beta2) * g * g
            m_hat = m / (1 - state.beta1 ** state.step_count)
            v_hat = v / (1 - state.beta2 ** state.step_count)
            p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


# -- serialization ------------------------------------------------------------

def save_model(model: MlpClassifier, path) -> None:
    """One JSON header line with ``layer_dims``, then little-endian float64
    parameters in ``params()`` order, each row-major."""
    header = json.dumps({"layer_dims": model.layer_dims}).encode() + b"\n"
    with open(path, "wb") as fh:
        fh.write(header)
        for p in model.params():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_model(path) -> MlpClassifier:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        flat = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    dims = [int(d) for d in header["layer_dims"]]
    model = MlpClassifier.zeros(dims)
    expected = model.num_params()
    if flat.size != expected:
        raise ShapeError(f"model file holds {flat.size} values, layer_dims need {expected}")
    offset = 0
    for p in model.params():
        p[...] = flat[offset:offset + p.size].reshape(p.shape)
        offset += p.size
    return model
