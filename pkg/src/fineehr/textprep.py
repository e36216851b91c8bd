"""Sentence splitting, tokenization and the training-split vocabulary."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

from .corpus import NoteRecord
from .errors import DataError

# A sentence ends at a newline, or after ., ! or ? followed by whitespace.
# Decimal points ("3.5") are therefore never split.
_SENTENCE_BREAK = re.compile(r"\r\n|\r|\n|(?<=[.!?])\s+")
_TOKEN = re.compile(r"[^\W_]+")


@dataclass(frozen=True)
class TokenizedNote:
    admission_id: str
    category: str
    sentences: tuple[tuple[str, ...], ...]

    def tokens(self):
        for s in self.sentences:
            yield from s


def split_sentences(raw: str) -> list[str]:
    return [seg.strip() for seg in _SENTENCE_BREAK.split(raw) if seg and seg.strip()]


def tokenize(sentence: str) -> list[str]:
    """Lowercase, then return the maximal alphanumeric runs."""
    return _TOKEN.findall(sentence.lower())


def tokenize_note(note: NoteRecord) -> TokenizedNote:
    sentences = []
    for seg in split_sentences(note.text):
        toks = tokenize(seg)
        if toks:
            sentences.append(tuple(toks))
    return TokenizedNote(note.admission_id, note.category, tuple(sentences))


@dataclass
class Vocabulary:
    tokens: list[str]
    freqs: list[int]
    min_count: int
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate token in vocabulary")
        if len(self.freqs) != len(self.tokens):
            raise ValueError("tokens and freqs differ in length")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def get(self, token, default=None):
        return self.index.get(token, default)

    def to_json(self) -> dict:
        return {
            "min_count": self.min_count,
            "tokens": [{"t": t, "f": f} for t, f in zip(self.tokens, self.freqs)],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Vocabulary":
        return cls(
            [e["t"] for e in data["tokens"]],
            [int(e["f"]) for e in data["tokens"]],
            int(data["min_count"]),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, ensure_ascii=False)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def build_vocabulary(notes: Iterable[TokenizedNote], min_count: int = 2) -> Vocabulary:
    """Count tokens over ``notes`` (training split only) and index them.

    Order is by descending frequency, ties broken lexicographically.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: Counter = Counter()
    for note in notes:
        for sentence in note.sentences:
            counts.update(sentence)
    kept = sorted(((t, c) for t, c in counts.items() if c >= min_count),
                  key=lambda tc: (-tc[1], tc[0]))
    if not kept:
        raise DataError(f"no token reaches min_count={min_count}; vocabulary would be empty")
    return Vocabulary([t for t, _ in kept], [c for _, c in kept], min_count)
