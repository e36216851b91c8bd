"""Skip-gram word2vec with negative sampling, and average-pooled note vectors.

The training loop is a single-threaded numba kernel driven by its own
64-bit LCG, so a fixed seed reproduces the matrices bit for bit.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .errors import DataError
from .textprep import TokenizedNote, Vocabulary

logger = logging.getLogger(__name__)

MAGIC = b"FEHRW2V1"
TABLE_SIZE = 1_000_000


@dataclass
class Word2VecParams:
    dim: int = 64
    window: int = 5
    negatives: int = 5
    epochs: int = 10
    learning_rate: float = 0.025
    subsample_threshold: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.subsample_threshold < 0:
            raise ValueError("subsample_threshold must be >= 0 (0 disables subsampling)")


@dataclass
class EmbeddingMatrix:
    input_vectors: np.ndarray
    output_vectors: np.ndarray

    def __post_init__(self):
        if self.input_vectors.shape != self.output_vectors.shape:
            raise ValueError("input and output matrices differ in shape")

    @property
    def dim(self) -> int:
        return self.input_vectors.shape[1]

    def __len__(self):
        return self.input_vectors.shape[0]

    def save(self, path) -> None:
        n, d = self.input_vectors.shape
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", n, d))
            fh.write(np.ascontiguousarray(self.input_vectors, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.output_vectors, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "EmbeddingMatrix":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:8] != MAGIC:
            raise DataError(f"{path}: not a word2vec matrix file (bad magic)")
        n, d = struct.unpack("<II", blob[8:16])
        expected = 16 + 2 * n * d * 8
        if len(blob) != expected:
            raise DataError(f"{path}: expected {expected} bytes, found {len(blob)}")
        arr = np.frombuffer(blob, dtype="<f8", offset=16).astype(np.float64)
        return cls(arr[: n * d].reshape(n, d).copy(), arr[n * d:].reshape(n, d).copy())

    def export_json(self, path, vocab: Vocabulary) -> None:
        rows = {t: self.input_vectors[i].tolist() for i, t in enumerate(vocab.tokens)}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"dim": self.dim, "vectors": rows}, fh, ensure_ascii=False)
            fh.write("\n")


@dataclass(eq=False)
class NoteEmbedding:
    admission_id: str
    category: str
    vector: np.ndarray
    n_known_tokens: int


# ---------------------------------------------------------------------------
# training kernel
# ---------------------------------------------------------------------------

_LCG_MUL = np.uint64(25214903917)
_LCG_ADD = np.uint64(11)


@njit(cache=True)
def _next(state):
    return state * _LCG_MUL + _LCG_ADD


@njit(cache=True)
def _uniform(state):
    # 24 high-quality bits -> [0, 1)
    return ((state >> np.uint64(16)) & np.uint64(0xFFFFFF)) / 16777216.0


@njit(cache=True)
def _sgns(corpus, offsets, keep_prob, syn0, syn1, table, window, negatives,
          epochs, lr0, seed):
    n_sent = offsets.shape[0] - 1
    dim = syn0.shape[1]
    total = epochs * corpus.shape[0]
    processed = 0
    state = np.uint64(seed) ^ np.uint64(0x5DEECE66D)
    kept = np.empty(corpus.shape[0], dtype=np.int64)
    neu1e = np.empty(dim, dtype=np.float64)
    tsize = np.uint64(table.shape[0])
    win = np.uint64(window)
    for _ in range(epochs):
        for s in range(n_sent):
            n_kept = 0
            for p in range(offsets[s], offsets[s + 1]):
                w = corpus[p]
                if keep_prob[w] < 1.0:
                    state = _next(state)
                    if _uniform(state) >= keep_prob[w]:
                        continue
                kept[n_kept] = w
                n_kept += 1
            # linear decay to 10% of lr0, driven by raw (pre-subsampling) words
            alpha = lr0 * (1.0 - 0.9 * processed / total)
            processed += offsets[s + 1] - offsets[s]
            for i in range(n_kept):
                state = _next(state)
                radius = np.int64((state >> np.uint64(16)) % win) + 1
                center = kept[i]
                lo = max(0, i - radius)
                hi = min(n_kept, i + radius + 1)
                for j in range(lo, hi):
                    if j == i:
                        continue
                    context = kept[j]
                    for d in range(dim):
                        neu1e[d] = 0.0
                    for k in range(negatives + 1):
                        if k == 0:
                            target = context
                            label = 1.0
                        else:
                            state = _next(state)
                            target = table[np.int64((state >> np.uint64(16)) % tsize)]
                            if target == context:
                                continue
                            label = 0.0
                        f = 0.0
                        for d in range(dim):
                            f += syn0[center, d] * syn1[target, d]
                        g = (label - 1.0 / (1.0 + np.exp(-f))) * alpha
                        for d in range(dim):
                            neu1e[d] += g * syn1[target, d]
                            syn1[target, d] += g * syn0[center, d]
                    for d in range(dim):
                        syn0[center, d] += neu1e[d]
    return syn0, syn1


def _unigram_table(freqs: np.ndarray, size: int = TABLE_SIZE) -> np.ndarray:
    weights = freqs.astype(np.float64) ** 0.75
    cum = np.cumsum(weights / weights.sum())
    cum[-1] = 1.0
    slots = (np.arange(size, dtype=np.float64) + 0.5) / size
    return np.searchsorted(cum, slots, side="right").astype(np.int64)


def _keep_probabilities(freqs: np.ndarray, threshold: float) -> np.ndarray:
    if threshold <= 0:
        return np.ones(len(freqs))
    total = freqs.sum()
    f = freqs / total
    keep = (np.sqrt(f / threshold) + 1.0) * threshold / f
    return np.minimum(keep, 1.0)


def encode_corpus(notes: Sequence[TokenizedNote], vocab: Vocabulary):
    """Flatten in-vocabulary token ids; ``offsets`` delimit sentences."""
    ids: list[int] = []
    offsets = [0]
    for note in notes:
        for sentence in note.sentences:
            ids.extend(i for i in (vocab.get(t) for t in sentence) if i is not None)
            if len(ids) > offsets[-1]:
                offsets.append(len(ids))
    return np.asarray(ids, dtype=np.int64), np.asarray(offsets, dtype=np.int64)


def train_word2vec(notes: Sequence[TokenizedNote], vocab: Vocabulary,
                   params: Word2VecParams) -> EmbeddingMatrix:
    """Train skip-gram vectors on ``notes`` (training split only).

    Out-of-vocabulary tokens are dropped before windows are formed.
    """
    corpus, offsets = encode_corpus(notes, vocab)
    if corpus.size == 0:
        raise DataError("no in-vocabulary tokens to train word2vec on")
    freqs = np.asarray(vocab.freqs, dtype=np.float64)
    rng = np.random.default_rng(params.seed)
    syn0 = rng.uniform(-0.5 / params.dim, 0.5 / params.dim, size=(len(vocab), params.dim))
    syn1 = np.zeros((len(vocab), params.dim))
    table = _unigram_table(freqs)
    keep = _keep_probabilities(freqs, params.subsample_threshold)
    logger.info("word2vec: %d tokens, %d sentences, vocab %d, dim %d",
                corpus.size, offsets.size - 1, len(vocab), params.dim)
    _sgns(corpus, offsets, keep, syn0, syn1, table, params.window, params.negatives,
          params.epochs, float(params.learning_rate), params.seed & 0xFFFFFFFFFFFF)
    if not (np.isfinite(syn0).all() and np.isfinite(syn1).all()):
        raise FloatingPointError("word2vec diverged: non-finite vectors")
    return EmbeddingMatrix(syn0, syn1)


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------


def pool_mean(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Componentwise mean.

    Computed as ``v0 + mean(v - v0)`` so identical inputs return ``v0``
    exactly.
    """
    if len(vectors) == 0:
        raise ValueError("pool_mean of an empty list")
    stacked = np.asarray([np.asarray(v, dtype=np.float64) for v in vectors]) \
        if not isinstance(vectors, np.ndarray) else np.asarray(vectors, dtype=np.float64)
    if stacked.ndim != 2:
        raise ValueError("vectors must all have the same length")
    first = stacked[0]
    return first + (stacked - first).mean(axis=0)


def embed_note(note: TokenizedNote, emb: EmbeddingMatrix, vocab: Vocabulary) -> NoteEmbedding:
    rows = [i for i in (vocab.get(t) for t in note.tokens()) if i is not None]
    if not rows:
        return NoteEmbedding(note.admission_id, note.category, np.zeros(emb.dim), 0)
    return NoteEmbedding(note.admission_id, note.category,
                         emb.input_vectors[rows].mean(axis=0), len(rows))


def nearest_words(word: str, emb: EmbeddingMatrix, vocab: Vocabulary, k: int = 10):
    idx = vocab.get(word)
    if idx is None:
        raise KeyError(f"{word!r} is not in the vocabulary")
    m = emb.input_vectors
    norms = np.linalg.norm(m, axis=1)
    norms[norms == 0] = 1.0
    sims = (m @ m[idx]) / (norms * norms[idx])
    sims[idx] = -np.inf
    order = np.argsort(-sims, kind="stable")[:k]
    return [(vocab.tokens[i], float(sims[i])) for i in order]


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(u @ v / (nu * nv))
