"""Per-category Siamese refiners trained with contrastive loss.

One symmetric MLP (tanh hidden layers, linear output) is trained per note
category on within-category pairs; pairs sharing a mortality label are
pulled together, pairs with differing labels are pushed past ``margin``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .embed import NoteEmbedding
from .errors import TrainingError
from .seeds import derive_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SiamesePair:
    category: str
    anchor_index: int
    contrast_index: int
    y: int

    def __post_init__(self):
        if self.anchor_index == self.contrast_index:
            raise ValueError("anchor and contrast must be distinct notes")
        if self.y not in (0, 1):
            raise ValueError("y must be 0 or 1")


@dataclass(eq=False)
class SiameseNetwork:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {k}: weight {w.shape} / bias {b.shape} mismatch")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k} input width does not match layer {k - 1} output")
        if self.weights[0].shape[1] != self.weights[-1].shape[0]:
            raise ValueError("input and output widths of a refiner must be equal")

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def dim(self) -> int:
        return self.weights[0].shape[1]

    @classmethod
    def initialize(cls, layer_dims: Sequence[int], rng: np.random.Generator) -> "SiameseNetwork":
        if len(layer_dims) < 2 or layer_dims[0] != layer_dims[-1]:
            raise ValueError(f"layer_dims must start and end at the embedding dim: {layer_dims}")
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    def copy(self) -> "SiameseNetwork":
        return SiameseNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def to_json(self) -> dict:
        return {
            "dims": self.layer_dims,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SiameseNetwork":
        return cls([np.asarray(w, dtype=np.float64) for w in data["weights"]],
                   [np.asarray(b, dtype=np.float64) for b in data["biases"]])


def symmetric_dims(dim: int, hidden_multiplier: float = 2.0, hidden_layers: int = 1) -> list[int]:
    """[d, m*d, d] for one hidden layer; deeper nets rise then fall."""
    width = max(1, int(round(hidden_multiplier * dim)))
    if hidden_layers < 1:
        return [dim, dim]
    up = [dim + (width - dim) * (k + 1) // ((hidden_layers + 1) // 2) for k in range((hidden_layers + 1) // 2)]
    down = up[: hidden_layers // 2][::-1]
    return [dim] + up + down + [dim]


def forward(net: SiameseNetwork, x: np.ndarray) -> np.ndarray:
    return _forward_trace(net, x)[-1]


def _forward_trace(net: SiameseNetwork, x: np.ndarray) -> list[np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.dim:
        raise ValueError(f"input has dimension {x.shape[-1]}, refiner expects {net.dim}")
    acts = [x]
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = acts[-1] @ w.T + b
        acts.append(z if k == last else np.tanh(z))
    return acts


def contrastive_loss(y, d, margin):
    # squares as products: pow() is not correctly rounded on every libm
    gap = max(margin - d, 0.0)
    return y * d * d + (1 - y) * gap * gap


def pair_loss_grad(net: SiameseNetwork, x_a, x_c, y: int, margin: float):
    """Contrastive loss of one pair and its gradient w.r.t. the shared parameters.

    Returns ``(loss, (grad_weights, grad_biases))``.  Both branches run
    through the same network as one 2-row batch, so the backward matmuls
    sum their contributions.
    """
    trace = _forward_trace(net, np.stack([np.asarray(x_a, dtype=np.float64),
                                          np.asarray(x_c, dtype=np.float64)]))
    out = trace[-1]
    diff = out[0] - out[1]
    d = float(np.sqrt(diff @ diff))
    loss = contrastive_loss(y, d, margin)
    if y == 1:
        g_out = 2.0 * diff
    elif 0.0 < d < margin:
        g_out = -2.0 * (margin - d) / d * diff
    else:
        # flat region, or the non-differentiable point d == 0 (gradient taken as 0)
        g_out = np.zeros_like(diff)
    delta = np.stack([g_out, -g_out])
    n_layers = len(net.weights)
    grads_w = [None] * n_layers
    grads_b = [None] * n_layers
    for k in range(n_layers - 1, -1, -1):
        grads_w[k] = delta.T @ trace[k]
        grads_b[k] = delta[0] + delta[1]
        if k:
            delta = (delta @ net.weights[k]) * (1.0 - trace[k] ** 2)
    return loss, (grads_w, grads_b)


def pair_distance(net: SiameseNetwork, x_a, x_c) -> float:
    return float(np.linalg.norm(forward(net, x_a) - forward(net, x_c)))


def sgd_step(net: SiameseNetwork, grads, learning_rate: float) -> None:
    grads_w, grads_b = grads
    for w, gw in zip(net.weights, grads_w):
        w -= learning_rate * gw
    for b, gb in zip(net.biases, grads_b):
        b -= learning_rate * gb


# ---------------------------------------------------------------------------
# pair selection
# ---------------------------------------------------------------------------


def _eligible(labels: Sequence[int]) -> bool:
    return len(labels) >= 2 and len(set(labels)) == 2


def select_pairs(notes_by_category: Mapping[str, Sequence[tuple]], count_per_category: int,
                 seed: int, balanced: bool = True) -> list[SiamesePair]:
    """Sample within-category pairs; ``y`` is 1 when labels agree.

    With ``balanced`` the pairs are split 50/50 between agreeing and
    disagreeing labels (positive count rounded up), each drawn uniformly
    over the unordered distinct pairs of its kind.  Otherwise pairs are
    uniform over all unordered distinct pairs.
    """
    pairs: list[SiamesePair] = []
    eligible = 0
    for category in sorted(notes_by_category):
        labels = [int(lbl) for _, lbl in notes_by_category[category]]
        if not _eligible(labels):
            logger.warning("category %r skipped for pair selection: needs >= 2 notes and both labels",
                           category)
            continue
        eligible += 1
        rng = np.random.default_rng(derive_seed(seed, "pairs", category))
        pairs.extend(_sample_category(category, np.asarray(labels), count_per_category, rng, balanced))
    if not eligible:
        raise TrainingError("no category is eligible for Siamese pair selection")
    return pairs


def _sample_category(category, labels, count, rng, balanced):
    idx = {v: np.flatnonzero(labels == v) for v in (0, 1)}
    n = len(labels)
    out = []

    def emit(i, j):
        if rng.random() < 0.5:
            i, j = j, i
        out.append(SiamesePair(category, int(i), int(j), int(labels[i] == labels[j])))

    if not balanced:
        for _ in range(count):
            i = int(rng.integers(n))
            j = int(rng.integers(n - 1))
            emit(i, j + (j >= i))
        return out

    # positive pairs: pick a class in proportion to its number of pairs
    class_pairs = np.array([len(idx[v]) * (len(idx[v]) - 1) / 2 for v in (0, 1)])
    n_neg = count // 2
    n_pos = count - n_neg
    if class_pairs.sum() == 0:
        n_pos, n_neg = 0, count
    for _ in range(n_pos):
        v = 0 if rng.random() * class_pairs.sum() < class_pairs[0] else 1
        members = idx[v]
        a, b = rng.choice(len(members), size=2, replace=False)
        emit(members[a], members[b])
    for _ in range(n_neg):
        emit(idx[1][int(rng.integers(len(idx[1])))], idx[0][int(rng.integers(len(idx[0])))])
    return out


# ---------------------------------------------------------------------------
# training and refinement
# ---------------------------------------------------------------------------


@dataclass
class SiameseTrainParams:
    margin: float = 1.0
    epochs: int = 20
    learning_rate: float = 0.01
    # None -> 4 x (number of notes in the category)
    pairs_per_epoch: int | None = None
    hidden_multiplier: float = 2.0
    hidden_layers: int = 1
    balanced: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueError("margin must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.pairs_per_epoch is not None and self.pairs_per_epoch < 1:
            raise ValueError("pairs_per_epoch must be >= 1")
        if not self.hidden_multiplier > 0:
            raise ValueError("hidden_multiplier must be > 0")


@dataclass(eq=False)
class RefinerBundle:
    margin: float
    networks: dict[str, SiameseNetwork] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"margin": self.margin,
                "categories": {c: self.networks[c].to_json() for c in sorted(self.networks)}}

    @classmethod
    def from_json(cls, data: dict) -> "RefinerBundle":
        return cls(float(data["margin"]),
                   {c: SiameseNetwork.from_json(v) for c, v in data["categories"].items()})

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)
            fh.write("\n")


def train_category(notes: Sequence[tuple], params: SiameseTrainParams, seed: int) -> SiameseNetwork:
    """Train one refiner on ``(vector, label)`` items of a single category."""
    xs = np.asarray([np.asarray(v, dtype=np.float64) for v, _ in notes])
    dim = xs.shape[1]
    rng = np.random.default_rng(seed)
    net = SiameseNetwork.initialize(symmetric_dims(dim, params.hidden_multiplier, params.hidden_layers), rng)
    per_epoch = params.pairs_per_epoch or 4 * len(notes)
    for epoch in range(params.epochs):
        pairs = select_pairs({"_": notes}, per_epoch, derive_seed(seed, "epoch", epoch), params.balanced)
        total = 0.0
        for p in pairs:
            loss, grads = pair_loss_grad(net, xs[p.anchor_index], xs[p.contrast_index], p.y, params.margin)
            sgd_step(net, grads, params.learning_rate)
            total += loss
        logger.debug("siamese epoch %d: mean pair loss %.5f", epoch, total / len(pairs))
    for w in net.weights + net.biases:
        if not np.isfinite(w).all():
            raise TrainingError("Siamese training diverged: non-finite parameters")
    return net


def train_refiners(notes_by_category: Mapping[str, Sequence[tuple]],
                   params: SiameseTrainParams) -> RefinerBundle:
    """Train one refiner per eligible category; the rest stay identity."""
    bundle = RefinerBundle(params.margin)
    for category in sorted(notes_by_category):
        notes = notes_by_category[category]
        if not _eligible([int(lbl) for _, lbl in notes]):
            logger.warning("category %r has no trainable pairs; left unrefined", category)
            continue
        bundle.networks[category] = train_category(notes, params, derive_seed(params.seed, category))
        logger.info("trained refiner for %r on %d notes", category, len(notes))
    if not bundle.networks:
        raise TrainingError("no category could be refined (each needs >= 2 notes with both labels)")
    return bundle


def refine(bundle: RefinerBundle, note: NoteEmbedding) -> NoteEmbedding:
    net = bundle.networks.get(note.category)
    if net is None:
        return note
    return NoteEmbedding(note.admission_id, note.category, forward(net, note.vector),
                         note.n_known_tokens)
