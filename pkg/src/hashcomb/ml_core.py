"""A small from-scratch MLP for binary classification.

ReLU hidden layers, a single sigmoid output and binary cross-entropy loss,
trained by plain SGD.  One *epoch* is one SGD update on one randomly drawn
training row, so ``train(..., epochs=25_000)`` performs 25 000 updates.

Weight matrices have shape ``(fan_out, fan_in)``.  The flat parameter vector
is layer-major: the row-major weight matrix of a layer followed by its bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

HIDDEN_LAYOUT = (50, 25, 20, 25, 50)


class TrainingDivergence(ArithmeticError):
    """The loss or the parameters became non-finite."""


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features must be (n, d) with one label per row")
        if not self.feature_names:
            self.feature_names = [f"x{i}" for i in range(self.features.shape[1])]

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "Dataset":
        return Dataset(self.features[rows], self.labels[rows], self.feature_names)


def train_test_split(dataset: Dataset, test_fraction: float, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    n = len(dataset)
    n_test = int(round(n * test_fraction))
    if n_test < 1 or n_test >= n:
        raise ValueError(f"cannot split {n} rows with test fraction {test_fraction}")
    perm = rng.permutation(n)
    return dataset.subset(np.sort(perm[n_test:])), dataset.subset(np.sort(perm[:n_test]))


@dataclass
class MlpModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def initialize(
        cls, input_dim: int, rng: np.random.Generator, hidden: Sequence[int] = HIDDEN_LAYOUT
    ) -> "MlpModel":
        """Glorot-uniform weights, zero biases."""
        sizes = [input_dim, *hidden, 1]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            r = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-r, r, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpModel":
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([part for w, b in zip(self.weights, self.biases) for part in (w.ravel(), b)])

    def load_flat(self, vector) -> "MlpModel":
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {vector.shape}")
        pos = 0
        for w, b in zip(self.weights, self.biases):
            w[...] = vector[pos : pos + w.size].reshape(w.shape)
            pos += w.size
            b[...] = vector[pos : pos + b.size]
            pos += b.size
        return self


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def _logits(model: MlpModel, X: np.ndarray) -> np.ndarray:
    a = X
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        a = z if i == last else np.maximum(z, 0.0)
    return a[..., 0]


def forward(model: MlpModel, x):
    """Probability of the positive class for one row or a matrix of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.sizes[0]:
        raise ValueError(f"input has {x.shape[-1]} features, model expects {model.sizes[0]}")
    p = _sigmoid(_logits(model, x))
    return float(p) if x.ndim == 1 else p


def bce_loss(model: MlpModel, X, y) -> float:
    z = _logits(model, np.atleast_2d(X))
    y = np.atleast_1d(y)
    return float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))


def gradients(model: MlpModel, X, y) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean BCE loss over the batch and its gradients by backpropagation."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    acts, pre = [X], []
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = acts[-1] @ w.T + b
        pre.append(z)
        acts.append(z if i == last else np.maximum(z, 0.0))
    z = pre[-1][:, 0]
    loss = float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))
    delta = ((_sigmoid(z) - y) / len(y))[:, None]
    gw, gb = [None] * len(model.weights), [None] * len(model.weights)
    for i in range(last, -1, -1):
        gw[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ model.weights[i]) * (pre[i - 1] > 0)
    return loss, gw, gb


def clip_by_norm(g: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(g))
    return g * (max_norm / norm) if norm > max_norm else g


def sgd_step(model: MlpModel, batch, eta: float, clip: float | None = None) -> MlpModel:
    """One SGD update on ``batch = (X, y)``; each weight/bias gradient is
    clipped to L2 norm ``clip`` when given."""
    if eta <= 0:
        raise ValueError("learning rate must be positive")
    loss, gw, gb = gradients(model, *batch)
    if not math.isfinite(loss):
        raise TrainingDivergence(f"non-finite loss {loss}")
    for w, b, dw, db in zip(model.weights, model.biases, gw, gb):
        if clip is not None:
            dw, db = clip_by_norm(dw, clip), clip_by_norm(db, clip)
        w -= eta * dw
        b -= eta * db
    return model


def train(
    model: MlpModel,
    dataset: Dataset,
    epochs: int,
    eta: float,
    rng: np.random.Generator,
    clip: float | None = None,
) -> MlpModel:
    """``epochs`` single-row SGD updates on rows drawn uniformly with replacement."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if np.unique(dataset.labels).size < 2:
        raise ValueError("training data contains a single class")
    if eta <= 0:
        raise ValueError("learning rate must be positive")
    rows = rng.integers(0, len(dataset), size=epochs)
    X, Y = dataset.features, dataset.labels.astype(np.float64)
    W, B = model.weights, model.biases
    last = len(W) - 1
    with np.errstate(over="ignore", invalid="ignore"):
        _sgd_rows(W, B, X, Y, rows, eta, clip, last)
    if not all(np.isfinite(w).all() and np.isfinite(b).all() for w, b in zip(W, B)):
        raise TrainingDivergence("parameters became non-finite")
    return model


def _sgd_rows(W, B, X, Y, rows, eta, clip, last) -> None:
    for step, r in enumerate(rows):
        a = X[r]
        acts = [a]
        for i in range(last):
            a = np.maximum(W[i] @ a + B[i], 0.0)
            acts.append(a)
        z = float(W[last][0] @ a + B[last][0])
        if not math.isfinite(z):
            raise TrainingDivergence(f"non-finite logit at update {step}")
        p = 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))
        delta = np.array([p - Y[r]])
        for i in range(last, -1, -1):
            dw = np.outer(delta, acts[i])
            db = delta
            if i:
                delta = (W[i].T @ delta) * (acts[i] > 0)
            if clip is not None:
                dw, db = clip_by_norm(dw, clip), clip_by_norm(db, clip)
            W[i] -= eta * dw
            B[i] -= eta * db


def confusion_counts(y_true, y_pred) -> tuple[int, int, int, int]:
    """(tp, fp, fn, tn) with class 1 as positive."""
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    return (
        int(np.sum(y_true & y_pred)),
        int(np.sum(~y_true & y_pred)),
        int(np.sum(y_true & ~y_pred)),
        int(np.sum(~y_true & ~y_pred)),
    )


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    # 2TP / (2TP + FP + FN) is the harmonic mean of precision and recall
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def classification_metrics(y_true, y_pred) -> tuple[float, float]:
    tp, fp, fn, tn = confusion_counts(y_true, y_pred)
    total = tp + fp + fn + tn
    if total == 0:
        raise ValueError("empty evaluation set")
    return (tp + tn) / total, f1_from_counts(tp, fp, fn)


def evaluate(model: MlpModel, dataset: Dataset, threshold: float = 0.5) -> tuple[float, float]:
    """(accuracy, F1) on ``dataset``."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    return classification_metrics(dataset.labels, forward(model, dataset.features) >= threshold)
