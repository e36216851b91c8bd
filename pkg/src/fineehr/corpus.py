"""Note/admission ingestion, synthetic corpora and the balanced train/test split.

CSV layout follows MIMIC-III: notes come from NOTEEVENTS (HADM_ID, CATEGORY,
TEXT) and labels from ADMISSIONS (HADM_ID, HOSPITAL_EXPIRE_FLAG).  Column
names are matched case-insensitively and extra columns are ignored.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .errors import DataError, DuplicateKeyError, RowError, SchemaError

logger = logging.getLogger(__name__)

NOTE_COLUMNS = ("HADM_ID", "CATEGORY", "TEXT")
ADMISSION_COLUMNS = ("HADM_ID", "HOSPITAL_EXPIRE_FLAG")


@dataclass(frozen=True)
class NoteRecord:
    admission_id: str
    category: str
    text: str

    def __post_init__(self):
        if not self.admission_id:
            raise ValueError("admission_id must be non-empty")
        if not self.category:
            raise ValueError("category must be non-empty")


@dataclass(frozen=True)
class AdmissionRecord:
    admission_id: str
    mortality: bool


@dataclass(frozen=True)
class SplitAssignment:
    train_ids: frozenset
    test_ids: frozenset
    seed: int

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "train": sorted(self.train_ids),
            "test": sorted(self.test_ids),
        }

    @classmethod
    def from_json(cls, data: dict) -> "SplitAssignment":
        return cls(frozenset(data["train"]), frozenset(data["test"]), int(data["seed"]))


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def _reader(source: BinaryIO):
    text = io.TextIOWrapper(source, encoding="utf-8", newline="")
    return csv.reader(text, strict=True)


def _locate(header: Sequence[str], required: Sequence[str]) -> dict[str, int]:
    positions = {name.strip().upper(): i for i, name in enumerate(header)}
    out = {}
    for col in required:
        if col not in positions:
            raise SchemaError(col)
        out[col] = positions[col]
    return out


def _rows(reader, required: Sequence[str]):
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError(required[0]) from None
    except csv.Error as exc:
        raise RowError(reader.line_num, str(exc)) from None
    cols = _locate(header, required)
    width = max(cols.values()) + 1
    while True:
        try:
            row = next(reader)
        except StopIteration:
            return
        except csv.Error as exc:
            raise RowError(reader.line_num, str(exc)) from None
        if not row:
            continue
        if len(row) < width:
            raise RowError(reader.line_num, f"expected at least {width} fields, got {len(row)}")
        yield reader.line_num, {c: row[i] for c, i in cols.items()}


def parse_notes_csv(source: BinaryIO, allow_missing_id: bool = False) -> list[NoteRecord]:
    """Read a NOTEEVENTS-style CSV into records, in file order.

    Rows with an empty HADM_ID are an error unless ``allow_missing_id`` is
    set, in which case they are dropped and counted in the log (MIMIC has
    outpatient notes without an admission).
    """
    notes = []
    dropped = 0
    for line, row in _rows(_reader(source), NOTE_COLUMNS):
        hadm = row["HADM_ID"].strip()
        category = row["CATEGORY"].strip()
        if not hadm:
            if allow_missing_id:
                dropped += 1
                continue
            raise RowError(line, "empty HADM_ID")
        if not category:
            raise RowError(line, "empty CATEGORY")
        notes.append(NoteRecord(hadm, category, row["TEXT"]))
    if dropped:
        logger.warning("dropped %d notes without HADM_ID", dropped)
    return notes


def parse_admissions_csv(source: BinaryIO) -> list[AdmissionRecord]:
    admissions = []
    seen: set[str] = set()
    for line, row in _rows(_reader(source), ADMISSION_COLUMNS):
        hadm = row["HADM_ID"].strip()
        flag = row["HOSPITAL_EXPIRE_FLAG"].strip()
        if not hadm:
            raise RowError(line, "empty HADM_ID")
        if flag not in ("0", "1"):
            raise RowError(line, f"HOSPITAL_EXPIRE_FLAG must be 0 or 1, got {flag!r}")
        if hadm in seen:
            raise DuplicateKeyError(hadm, line)
        seen.add(hadm)
        admissions.append(AdmissionRecord(hadm, flag == "1"))
    return admissions


def write_notes_csv(notes: Iterable[NoteRecord], sink: BinaryIO) -> None:
    text = io.TextIOWrapper(sink, encoding="utf-8", newline="", write_through=True)
    writer = csv.writer(text, lineterminator="\n")
    writer.writerow(NOTE_COLUMNS)
    for n in notes:
        writer.writerow([n.admission_id, n.category, n.text])
    text.detach()


def write_admissions_csv(admissions: Iterable[AdmissionRecord], sink: BinaryIO) -> None:
    text = io.TextIOWrapper(sink, encoding="utf-8", newline="", write_through=True)
    writer = csv.writer(text, lineterminator="\n")
    writer.writerow(ADMISSION_COLUMNS)
    for a in admissions:
        writer.writerow([a.admission_id, "1" if a.mortality else "0"])
    text.detach()


def read_corpus(notes_path, admissions_path, allow_missing_id: bool = False):
    with open(notes_path, "rb") as fh:
        notes = parse_notes_csv(fh, allow_missing_id=allow_missing_id)
    with open(admissions_path, "rb") as fh:
        admissions = parse_admissions_csv(fh)
    return notes, admissions


# ---------------------------------------------------------------------------
# Synthetic corpora
# ---------------------------------------------------------------------------


@dataclass
class CategorySpec:
    name: str
    presence_probability: float
    signal_strength: float
    # overrides SyntheticConfig.notes_per_category for this category
    notes: tuple[int, int] | None = None


@dataclass
class SyntheticConfig:
    """Parameters of a synthetic labeled note corpus.

    Each category owns a pool of label-independent tokens plus one pool of
    label-indicative tokens per mortality class.  A note from a category
    with ``signal_strength`` s draws each token from the indicative pool of
    its admission's label with probability s, otherwise from noise (shared
    pool or the category's own pool).
    """

    n_admissions: int = 400
    positive_fraction: float = 0.5
    categories: list[CategorySpec] = field(default_factory=list)
    notes_per_category: tuple[int, int] = (1, 3)
    tokens_per_note: tuple[int, int] = (20, 40)
    shared_tokens: int = 200
    category_tokens: int = 40
    indicative_tokens: int = 12
    category_token_fraction: float = 0.3
    newline_probability: float = 0.06
    period_probability: float = 0.06
    uppercase_probability: float = 0.05
    seed: int = 0

    def __post_init__(self):
        self.categories = [
            c if isinstance(c, CategorySpec) else CategorySpec(**c) for c in self.categories
        ]
        self.notes_per_category = tuple(self.notes_per_category)
        self.tokens_per_note = tuple(self.tokens_per_note)
        for c in self.categories:
            if c.notes is not None:
                c.notes = tuple(c.notes)
        self.validate()

    def validate(self) -> None:
        if self.n_admissions < 2:
            raise ValueError("n_admissions must be at least 2")
        if not 0.0 < self.positive_fraction < 1.0:
            raise ValueError("positive_fraction must lie in (0, 1)")
        if not self.categories:
            raise ValueError("at least one category is required")
        names = [c.name for c in self.categories]
        if len(set(_slug(n) for n in names)) != len(names):
            raise ValueError(f"category names must be distinct after normalisation: {names}")
        for c in self.categories:
            if not 0.0 < c.presence_probability <= 1.0:
                raise ValueError(f"{c.name}: presence_probability must lie in (0, 1]")
            if not 0.0 <= c.signal_strength <= 1.0:
                raise ValueError(f"{c.name}: signal_strength must lie in [0, 1]")
            _check_range(c.notes or self.notes_per_category, f"{c.name}.notes", lo=1)
        _check_range(self.notes_per_category, "notes_per_category", lo=1)
        _check_range(self.tokens_per_note, "tokens_per_note", lo=1)
        if self.shared_tokens < 1 or self.indicative_tokens < 1 or self.category_tokens < 0:
            raise ValueError("token pool sizes must be positive")
        for name in ("category_token_fraction", "newline_probability",
                     "period_probability", "uppercase_probability"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def _check_range(r, name, lo):
    if len(r) != 2 or r[0] < lo or r[1] < r[0]:
        raise ValueError(f"{name} must be a range [lo, hi] with {lo} <= lo <= hi, got {r}")


def _slug(name: str) -> str:
    return re.sub(r"[^0-9a-z]", "", name.lower()) or "cat"


def n_positives(n: int, fraction: float) -> int:
    return int(math.floor(n * fraction + 0.5))


def generate_synthetic(config: SyntheticConfig) -> tuple[list[NoteRecord], list[AdmissionRecord]]:
    config.validate()
    rng = np.random.default_rng(config.seed)
    n = config.n_admissions
    labels = np.zeros(n, dtype=bool)
    labels[: n_positives(n, config.positive_fraction)] = True
    labels = labels[rng.permutation(n)]

    shared = [f"w{i:03d}" for i in range(config.shared_tokens)]
    pools = {}
    for c in config.categories:
        s = _slug(c.name)
        pools[c.name] = (
            [f"{s}{i:02d}" for i in range(config.category_tokens)],
            [f"{s}neg{i:02d}" for i in range(config.indicative_tokens)],
            [f"{s}pos{i:02d}" for i in range(config.indicative_tokens)],
        )

    notes: list[NoteRecord] = []
    admissions: list[AdmissionRecord] = []
    for i in range(n):
        hadm = str(100000 + i)
        label = bool(labels[i])
        admissions.append(AdmissionRecord(hadm, label))
        for c in config.categories:
            if rng.random() >= c.presence_probability:
                continue
            lo, hi = c.notes or config.notes_per_category
            for _ in range(int(rng.integers(lo, hi + 1))):
                text = _note_text(rng, config, c, shared, pools[c.name], label)
                notes.append(NoteRecord(hadm, c.name, text))
    return notes, admissions


def _note_text(rng, config, category, shared, pools, label) -> str:
    own, neg, pos = pools
    indicative = pos if label else neg
    length = int(rng.integers(config.tokens_per_note[0], config.tokens_per_note[1] + 1))
    parts = []
    for k in range(length):
        u = rng.random()
        if u < category.signal_strength:
            tok = indicative[int(rng.integers(len(indicative)))]
        elif own and rng.random() < config.category_token_fraction:
            tok = own[int(rng.integers(len(own)))]
        else:
            tok = shared[int(rng.integers(len(shared)))]
        if rng.random() < config.uppercase_probability:
            tok = tok.upper()
        parts.append(tok)
        if k == length - 1:
            parts.append(".")
            break
        v = rng.random()
        if v < config.newline_probability:
            parts.append("\n")
        elif v < config.newline_probability + config.period_probability:
            parts.append(". ")
        else:
            parts.append(" ")
    return "".join(parts)


# ---------------------------------------------------------------------------
# Balancing and splitting
# ---------------------------------------------------------------------------


def balance_and_split(
    admissions: Sequence[AdmissionRecord], test_fraction: float = 0.2, seed: int = 0
) -> SplitAssignment:
    """Downsample the majority class, then make a stratified train/test split.

    Ids are sorted before any random draw, so the result depends only on the
    admission set and ``seed``, not on input order.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    pos = sorted(a.admission_id for a in admissions if a.mortality)
    neg = sorted(a.admission_id for a in admissions if not a.mortality)
    if not pos or not neg:
        raise DataError(
            f"both classes are required for balancing (positives={len(pos)}, negatives={len(neg)})"
        )
    rng = np.random.default_rng(seed)
    m = min(len(pos), len(neg))
    pos = [pos[i] for i in sorted(rng.choice(len(pos), size=m, replace=False))]
    neg = [neg[i] for i in sorted(rng.choice(len(neg), size=m, replace=False))]

    n_test = int(math.floor(2 * m * test_fraction + 0.5))
    n_test_pos = n_test // 2
    n_test_neg = n_test - n_test_pos
    pos = [pos[i] for i in rng.permutation(m)]
    neg = [neg[i] for i in rng.permutation(m)]
    test = pos[:n_test_pos] + neg[:n_test_neg]
    train = pos[n_test_pos:] + neg[n_test_neg:]
    return SplitAssignment(frozenset(train), frozenset(test), int(seed))


def save_split(split: SplitAssignment, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(split.to_json(), fh, indent=1)
        fh.write("\n")
