"""Category-weighted admission embeddings.

Per-admission category embeddings are combined as ``sum_c w_c * v_c`` over
a fixed category universe (absent categories contribute zero).  The
scalar weights are learned jointly with a small tanh classifier head on
the mortality label; only the weights (and optionally the head's hidden
layer) are used as features afterwards.
"""

from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .embed import NoteEmbedding, pool_mean
from .errors import DataError, TrainingError

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class CategoryEmbeddingSet:
    admission_id: str
    vectors: dict[str, np.ndarray]
    dim: int

    def __post_init__(self):
        for c, v in self.vectors.items():
            if v.shape != (self.dim,):
                raise ValueError(f"{c}: vector has shape {v.shape}, expected ({self.dim},)")

    def matrix(self, universe: Sequence[str]) -> np.ndarray:
        """Stack vectors in universe order; absent categories become zero rows."""
        unknown = set(self.vectors) - set(universe)
        if unknown:
            raise DataError(f"admission {self.admission_id}: unseen categories {sorted(unknown)}")
        out = np.zeros((len(universe), self.dim))
        for k, c in enumerate(universe):
            v = self.vectors.get(c)
            if v is not None:
                out[k] = v
        return out

    def mask(self, universe: Sequence[str]) -> np.ndarray:
        return np.array([c in self.vectors for c in universe], dtype=np.float64)


@dataclass(eq=False)
class CategoryWeights:
    categories: list[str]
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (len(self.categories),):
            raise ValueError("need exactly one weight per category")
        if len(set(self.categories)) != len(self.categories):
            raise ValueError("duplicate category in universe")

    @classmethod
    def uniform(cls, categories: Sequence[str]) -> "CategoryWeights":
        cats = list(categories)
        return cls(cats, np.full(len(cats), 1.0 / len(cats)))

    def as_dict(self) -> dict[str, float]:
        return {c: float(w) for c, w in zip(self.categories, self.weights)}

    def to_json(self) -> dict:
        return {"categories": list(self.categories), "weights": self.weights.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "CategoryWeights":
        return cls(list(data["categories"]), data["weights"])


@dataclass(eq=False)
class AdmissionClassifierHead:
    """tanh hidden layer followed by a scalar logistic output."""

    hidden_weights: np.ndarray  # (hidden, dim)
    hidden_bias: np.ndarray
    output_weights: np.ndarray  # (hidden,)
    output_bias: float

    def hidden(self, z: np.ndarray) -> np.ndarray:
        return np.tanh(z @ self.hidden_weights.T + self.hidden_bias)

    def logit(self, z: np.ndarray) -> np.ndarray:
        return self.hidden(z) @ self.output_weights + self.output_bias

    def to_json(self) -> dict:
        return {
            "hidden_weights": self.hidden_weights.tolist(),
            "hidden_bias": self.hidden_bias.tolist(),
            "output_weights": self.output_weights.tolist(),
            "output_bias": float(self.output_bias),
        }

    @classmethod
    def from_json(cls, data: dict) -> "AdmissionClassifierHead":
        return cls(np.asarray(data["hidden_weights"], dtype=np.float64),
                   np.asarray(data["hidden_bias"], dtype=np.float64),
                   np.asarray(data["output_weights"], dtype=np.float64),
                   float(data["output_bias"]))


@dataclass
class WeightTrainParams:
    epochs: int = 200
    learning_rate: float = 0.05
    hidden: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")


def build_category_embeddings(notes: Sequence[NoteEmbedding]) -> CategoryEmbeddingSet:
    if not notes:
        raise ValueError("cannot build category embeddings from no notes")
    ids = {n.admission_id for n in notes}
    if len(ids) != 1:
        raise ValueError(f"notes span several admissions: {sorted(ids)}")
    groups: dict[str, list[np.ndarray]] = defaultdict(list)
    for n in notes:
        groups[n.category].append(n.vector)
    dim = len(notes[0].vector)
    return CategoryEmbeddingSet(notes[0].admission_id,
                                {c: pool_mean(vs) for c, vs in groups.items()}, dim)


def group_by_admission(notes: Sequence[NoteEmbedding]) -> dict[str, list[NoteEmbedding]]:
    out: dict[str, list[NoteEmbedding]] = defaultdict(list)
    for n in notes:
        out[n.admission_id].append(n)
    return dict(out)


def weighted_pool(cset: CategoryEmbeddingSet, weights: CategoryWeights,
                  renormalize: bool = False) -> np.ndarray:
    """Sum of ``weight_c * vector_c`` over the category universe.

    Missing categories contribute zero.  ``renormalize`` divides by the
    summed weight of the categories actually present (off by default, which
    keeps the map linear in the weights).
    """
    m = cset.matrix(weights.categories)
    pooled = weights.weights @ m
    if renormalize:
        present = float(weights.weights @ cset.mask(weights.categories))
        if present != 0.0:
            pooled = pooled / present
    return pooled


def admission_embedding(cset: CategoryEmbeddingSet, weights: CategoryWeights,
                        renormalize: bool = False) -> np.ndarray:
    """Feature vector handed to downstream classifiers."""
    return weighted_pool(cset, weights, renormalize)


# ---------------------------------------------------------------------------
# joint training of weights + head
# ---------------------------------------------------------------------------


def _bce_with_logit(logit: float, y: float) -> float:
    # log(1 + exp(-|l|)) + max(l, 0) - l*y
    return math.log1p(math.exp(-abs(logit))) + max(logit, 0.0) - logit * y


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def joint_loss_grad(weights: np.ndarray, head: AdmissionClassifierHead, m: np.ndarray, y: float):
    """Cross-entropy of one admission and its gradient.

    ``m`` is the (categories x dim) stacked category matrix.  Returns
    ``(loss, grad_weights, (grad_hidden_w, grad_hidden_b, grad_out_w, grad_out_b))``.
    """
    z = weights @ m
    h = np.tanh(head.hidden_weights @ z + head.hidden_bias)
    logit = float(h @ head.output_weights + head.output_bias)
    loss = _bce_with_logit(logit, y)
    g = _sigmoid(logit) - y
    g_ow = g * h
    g_ob = g
    g_pre = g * head.output_weights * (1.0 - h * h)
    g_hw = np.outer(g_pre, z)
    g_hb = g_pre
    g_z = head.hidden_weights.T @ g_pre
    g_w = m @ g_z
    return loss, g_w, (g_hw, g_hb, g_ow, g_ob)


def category_universe(sets: Sequence[CategoryEmbeddingSet]) -> list[str]:
    return sorted({c for s in sets for c in s.vectors})


def train_weights(train_sets: Sequence[tuple[CategoryEmbeddingSet, int]],
                  params: WeightTrainParams, universe: Sequence[str] | None = None):
    """Fit category weights and the classifier head by per-sample SGD.

    Weights start at ``1/|universe|``; the head is seeded uniform in
    ``±1/sqrt(fan_in)`` with zero biases.  Returns ``(CategoryWeights, head)``.
    """
    labels = np.array([int(y) for _, y in train_sets])
    if len(set(labels.tolist())) != 2:
        raise DataError("weight training needs both mortality labels in the training data")
    cats = list(universe) if universe is not None else category_universe([s for s, _ in train_sets])
    mats = np.stack([s.matrix(cats) for s, _ in train_sets])
    dim = mats.shape[2]
    rng = np.random.default_rng(params.seed)
    w = np.full(len(cats), 1.0 / len(cats))
    b1 = 1.0 / math.sqrt(dim)
    b2 = 1.0 / math.sqrt(params.hidden)
    head = AdmissionClassifierHead(
        rng.uniform(-b1, b1, size=(params.hidden, dim)),
        np.zeros(params.hidden),
        rng.uniform(-b2, b2, size=params.hidden),
        0.0,
    )
    lr = params.learning_rate
    for epoch in range(params.epochs):
        total = 0.0
        for i in rng.permutation(len(labels)):
            loss, g_w, (g_hw, g_hb, g_ow, g_ob) = joint_loss_grad(w, head, mats[i], labels[i])
            total += loss
            w -= lr * g_w
            head.hidden_weights -= lr * g_hw
            head.hidden_bias -= lr * g_hb
            head.output_weights -= lr * g_ow
            head.output_bias -= lr * g_ob
        if epoch % 50 == 0 or epoch == params.epochs - 1:
            logger.debug("weights epoch %d: mean loss %.5f, weights %s",
                         epoch, total / len(labels), np.round(w, 4).tolist())
    if not np.isfinite(w).all():
        raise TrainingError("category weight training diverged")
    return CategoryWeights(cats, w), head


def save_weights(path, weights: CategoryWeights, head: AdmissionClassifierHead | None = None) -> None:
    data = weights.to_json()
    if head is not None:
        data["head"] = head.to_json()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh)
        fh.write("\n")


def load_weights(path):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    head = AdmissionClassifierHead.from_json(data["head"]) if "head" in data else None
    return CategoryWeights.from_json(data), head
