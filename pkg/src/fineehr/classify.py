"""Downstream mortality classifiers: logistic regression and a one-hidden-layer MLP.

Both expose ``predict_proba`` and ``to_json``; ``load_model`` dispatches on
the ``kind`` field of the serialized form.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, TrainingError

# logits are clipped so probabilities stay strictly inside (0, 1)
_LOGIT_CLIP = 30.0


def sigmoid(x):
    x = np.clip(np.asarray(x, dtype=np.float64), -_LOGIT_CLIP, _LOGIT_CLIP)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _log1pexp(x):
    return np.logaddexp(0.0, x)


def _check_data(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"X must be (n, d) with n == len(y); got {X.shape} and {y.shape}")
    if X.shape[0] < 2:
        raise DataError("need at least two training examples")
    if not set(np.unique(y).tolist()) == {0.0, 1.0}:
        raise DataError("training labels must contain both classes 0 and 1")
    return X, y


@dataclass(eq=False)
class LogRegModel:
    weights: np.ndarray
    bias: float
    l2: float
    trained: bool = True
    loss_trace: list[float] = field(default_factory=list, repr=False)

    kind = "logreg"

    def logit(self, X):
        return np.asarray(X, dtype=np.float64) @ self.weights + self.bias

    def predict_proba(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.weights.shape[0]:
            raise ValueError(f"input has dimension {x.shape[-1]}, model expects {self.weights.shape[0]}")
        p = sigmoid(self.logit(x))
        return float(p) if p.ndim == 0 else p

    def to_json(self) -> dict:
        return {"kind": self.kind, "weights": self.weights.tolist(), "bias": float(self.bias),
                "l2": self.l2}


def logreg_loss(weights, bias, X, y, l2):
    z = X @ weights + bias
    return float(np.mean(_log1pexp(z) - y * z) + 0.5 * l2 * weights @ weights)


def train_logreg(X, y, l2: float = 1e-3, epochs: int = 500, lr: float = 0.1,
                 seed: int | None = None) -> LogRegModel:
    """Full-batch gradient descent from zero parameters.

    ``seed`` is accepted for interface symmetry; the fit does not use it.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if l2 < 0 or not lr > 0:
        raise ValueError("need l2 >= 0 and lr > 0")
    X, y = _check_data(X, y)
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    trace = []
    for _ in range(epochs):
        trace.append(logreg_loss(w, b, X, y, l2))
        r = sigmoid(X @ w + b) - y
        w = w - lr * (X.T @ r / n + l2 * w)
        b = b - lr * float(r.mean())
    trace.append(logreg_loss(w, b, X, y, l2))
    if not np.isfinite(w).all():
        raise TrainingError("logistic regression diverged")
    return LogRegModel(w, b, l2, True, trace)


@dataclass(eq=False)
class MlpClassifier:
    hidden_weights: np.ndarray  # (hidden, d)
    hidden_bias: np.ndarray
    output_weights: np.ndarray  # (hidden,)
    output_bias: float

    kind = "mlp"

    @property
    def layer_dims(self):
        return [self.hidden_weights.shape[1], self.hidden_weights.shape[0], 1]

    def logit(self, X):
        h = np.tanh(np.asarray(X, dtype=np.float64) @ self.hidden_weights.T + self.hidden_bias)
        return h @ self.output_weights + self.output_bias

    def predict_proba(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.hidden_weights.shape[1]:
            raise ValueError(f"input has dimension {x.shape[-1]}, model expects {self.hidden_weights.shape[1]}")
        p = sigmoid(self.logit(x))
        return float(p) if p.ndim == 0 else p

    def to_json(self) -> dict:
        return {"kind": self.kind, "dims": self.layer_dims,
                "hidden_weights": self.hidden_weights.tolist(),
                "hidden_bias": self.hidden_bias.tolist(),
                "output_weights": self.output_weights.tolist(),
                "output_bias": float(self.output_bias)}


def train_mlp(X, y, hidden: int = 32, epochs: int = 500, lr: float = 0.1, seed: int = 0,
              batch_size: int = 32) -> MlpClassifier:
    """Mini-batch SGD on cross-entropy; weights seeded uniform in ±1/sqrt(fan_in)."""
    if hidden < 1:
        raise ValueError("hidden must be >= 1")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if not lr > 0 or batch_size < 1:
        raise ValueError("need lr > 0 and batch_size >= 1")
    X, y = _check_data(X, y)
    n, d = X.shape
    rng = np.random.default_rng(seed)
    W1 = rng.uniform(-1 / math.sqrt(d), 1 / math.sqrt(d), size=(hidden, d))
    b1 = np.zeros(hidden)
    w2 = rng.uniform(-1 / math.sqrt(hidden), 1 / math.sqrt(hidden), size=hidden)
    b2 = 0.0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb, yb = X[idx], y[idx]
            h = np.tanh(xb @ W1.T + b1)
            r = (sigmoid(h @ w2 + b2) - yb) / len(idx)
            g_pre = np.outer(r, w2) * (1.0 - h * h)
            w2 = w2 - lr * (h.T @ r)
            b2 = b2 - lr * float(r.sum())
            W1 = W1 - lr * (g_pre.T @ xb)
            b1 = b1 - lr * g_pre.sum(axis=0)
    if not (np.isfinite(W1).all() and np.isfinite(w2).all()):
        raise TrainingError("MLP training diverged")
    return MlpClassifier(W1, b1, w2, b2)


@dataclass(eq=False)
class Standardizer:
    """Per-feature z-scoring with statistics from the training split."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        return cls(X.mean(axis=0), scale)

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale

    def to_json(self) -> dict:
        return {"kind": "standardizer", "mean": self.mean.tolist(), "scale": self.scale.tolist()}


def predict_proba(model, x):
    return model.predict_proba(x)


def load_model(data: dict):
    kind = data.get("kind")
    if kind == "logreg":
        return LogRegModel(np.asarray(data["weights"], dtype=np.float64), float(data["bias"]),
                           float(data["l2"]))
    if kind == "mlp":
        return MlpClassifier(np.asarray(data["hidden_weights"], dtype=np.float64),
                             np.asarray(data["hidden_bias"], dtype=np.float64),
                             np.asarray(data["output_weights"], dtype=np.float64),
                             float(data["output_bias"]))
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_json(), fh)
        fh.write("\n")


CLASSIFIERS = ("logreg", "mlp")
