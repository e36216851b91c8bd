"""End-to-end pipeline and the four-setting ablation.

Upstream stages (ingest, split, tokenization, vocabulary, word2vec, raw
note embeddings) run once; the ablation settings differ only in whether
notes are refined by the Siamese refiners and whether categories are
pooled with learned weights.
"""

from __future__ import annotations

import contextlib
import csv
import json
import logging
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .. import classify, corpus, embed, metrics, siamese, textprep, weighting
from ..corpus import AdmissionRecord, NoteRecord, SplitAssignment
from ..embed import NoteEmbedding
from ..errors import FineEHRError, LeakageError, StageError
from .config import SETTING_FLAGS, SETTINGS, PipelineConfig

logger = logging.getLogger(__name__)

_DATA, _TRAINING = 3, 4


@contextlib.contextmanager
def stage(name: str, exit_code: int, timings: dict | None = None):
    start = time.perf_counter()
    try:
        yield
    except (LeakageError, StageError):
        raise
    except FineEHRError as exc:
        raise StageError(name, exc, exc.exit_code) from exc
    except (ValueError, KeyError, FloatingPointError, RuntimeError) as exc:
        raise StageError(name, exc, exit_code) from exc
    finally:
        if timings is not None:
            timings[name] = timings.get(name, 0.0) + time.perf_counter() - start


def assert_train_only(stage_name: str, admission_ids: Iterable[str], split: SplitAssignment) -> None:
    leaked = sorted(set(admission_ids) - split.train_ids)
    if leaked:
        raise LeakageError(stage_name, leaked)


# ---------------------------------------------------------------------------
# guarded training entry points
# ---------------------------------------------------------------------------


def fit_vocabulary(notes: Sequence[textprep.TokenizedNote], split: SplitAssignment,
                   min_count: int) -> textprep.Vocabulary:
    assert_train_only("vocabulary", (n.admission_id for n in notes), split)
    return textprep.build_vocabulary(notes, min_count)


def fit_word2vec(notes, vocab, split, params) -> embed.EmbeddingMatrix:
    assert_train_only("word2vec", (n.admission_id for n in notes), split)
    return embed.train_word2vec(notes, vocab, params)


def fit_refiners(notes: Sequence[NoteEmbedding], labels: dict[str, int], split,
                 params) -> siamese.RefinerBundle:
    assert_train_only("siamese", (n.admission_id for n in notes), split)
    by_cat: dict[str, list] = defaultdict(list)
    for n in notes:
        by_cat[n.category].append((n.vector, labels[n.admission_id]))
    return siamese.train_refiners(by_cat, params)


def fit_weights(sets: Sequence[weighting.CategoryEmbeddingSet], labels, split, params,
                universe):
    assert_train_only("weighting", (s.admission_id for s in sets), split)
    return weighting.train_weights([(s, labels[s.admission_id]) for s in sets], params, universe)


def fit_classifier(name: str, X, y, ids, split, params: dict):
    assert_train_only(f"classifier.{name}", ids, split)
    if name == "logreg":
        return classify.train_logreg(X, y, **params)
    if name == "mlp":
        return classify.train_mlp(X, y, **params)
    raise ValueError(f"unknown classifier {name!r}")


# ---------------------------------------------------------------------------
# upstream
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Upstream:
    config: PipelineConfig
    labels: dict[str, int]
    split: SplitAssignment
    vocab: textprep.Vocabulary
    word_vectors: embed.EmbeddingMatrix
    raw: list[NoteEmbedding]
    universe: list[str]
    timings: dict = field(default_factory=dict)

    @property
    def train_ids(self) -> list[str]:
        return sorted(self.split.train_ids)

    @property
    def test_ids(self) -> list[str]:
        return sorted(self.split.test_ids)


def load_data(config: PipelineConfig) -> tuple[list[NoteRecord], list[AdmissionRecord]]:
    if config.synthetic is not None:
        return corpus.generate_synthetic(config.synthetic)
    return corpus.read_corpus(config.notes_csv, config.admissions_csv, config.allow_missing_id)


def prepare(config: PipelineConfig) -> Upstream:
    timings: dict = {}
    with stage("ingest", _DATA, timings):
        notes, admissions = load_data(config)
        excluded = set(config.exclude_categories)
        notes = [n for n in notes if n.category not in excluded]
        known = {a.admission_id for a in admissions}
        orphans = sum(1 for n in notes if n.admission_id not in known)
        if orphans:
            logger.warning("dropping %d notes whose HADM_ID has no admission row", orphans)
            notes = [n for n in notes if n.admission_id in known]
        with_notes = {n.admission_id for n in notes}
        empty = [a for a in admissions if a.admission_id not in with_notes]
        if empty:
            logger.warning("dropping %d admissions without notes", len(empty))
        admissions = [a for a in admissions if a.admission_id in with_notes]
        labels = {a.admission_id: int(a.mortality) for a in admissions}

    with stage("split", _DATA, timings):
        split = corpus.balance_and_split(admissions, config.test_fraction, config.split_seed)
        keep = split.train_ids | split.test_ids
        notes = [n for n in notes if n.admission_id in keep]
        logger.info("split: %d train / %d test admissions, %d notes",
                    len(split.train_ids), len(split.test_ids), len(notes))

    with stage("textprep", _DATA, timings):
        tokenized = [textprep.tokenize_note(n) for n in notes]
        train_tok = [t for t in tokenized if t.admission_id in split.train_ids]
    with stage("vocabulary", _DATA, timings):
        vocab = fit_vocabulary(train_tok, split, config.min_count)
    with stage("word2vec", _TRAINING, timings):
        vectors = fit_word2vec(train_tok, vocab, split, config.word2vec)
    with stage("embed", _DATA, timings):
        raw = [embed.embed_note(t, vectors, vocab) for t in tokenized]
        universe = sorted({n.category for n in raw if n.admission_id in split.train_ids})
    return Upstream(config, labels, split, vocab, vectors, raw, universe, timings)


# ---------------------------------------------------------------------------
# settings
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class SettingResult:
    setting: str
    metrics: dict[str, dict]
    models: dict
    weights: weighting.CategoryWeights | None = None
    head: weighting.AdmissionClassifierHead | None = None
    features: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    scaler: classify.Standardizer | None = None


def _category_sets(notes: Sequence[NoteEmbedding], universe) -> dict[str, weighting.CategoryEmbeddingSet]:
    sets = {}
    allowed = set(universe)
    for hadm, group in weighting.group_by_admission(notes).items():
        # categories never seen in training have no weight; drop them
        group = [n for n in group if n.category in allowed]
        if group:
            sets[hadm] = weighting.build_category_embeddings(group)
    return sets


def admission_features(up: Upstream, notes: Sequence[NoteEmbedding], use_weights: bool,
                       timings: dict, tag: str):
    """Return ``(features by admission id, weights, head)`` for one setting."""
    ids = up.train_ids + up.test_ids
    if not use_weights:
        by_adm = weighting.group_by_admission(notes)
        return {h: embed.pool_mean([n.vector for n in by_adm[h]]) for h in ids}, None, None

    dim = up.word_vectors.dim
    with stage("weighting", _TRAINING, timings):
        sets = _category_sets(notes, up.universe)
        train_sets = [sets[h] for h in up.train_ids if h in sets]
        params = up.config.weighting
        weights, head = fit_weights(train_sets, up.labels, up.split, params, up.universe)
        logger.info("%s category weights: %s", tag,
                    {c: round(w, 4) for c, w in weights.as_dict().items()})
    feats = {}
    for h in ids:
        s = sets.get(h)
        if s is None:
            pooled = np.zeros(dim)
        else:
            pooled = weighting.admission_embedding(s, weights, up.config.renormalize)
        feats[h] = head.hidden(pooled) if up.config.feature == "hidden" else pooled
    return feats, weights, head


def run_setting(up: Upstream, setting: str, refiners: siamese.RefinerBundle | None = None,
                timings: dict | None = None) -> SettingResult:
    metric, weight = SETTING_FLAGS[setting]
    timings = {} if timings is None else timings
    notes = up.raw
    if metric:
        if refiners is None:
            refiners = train_refiners_for(up, timings)
        with stage("refine", _DATA, timings):
            notes = [siamese.refine(refiners, n) for n in up.raw]
    feats, weights, head = admission_features(up, notes, weight, timings, setting)

    X_train = np.stack([feats[h] for h in up.train_ids])
    y_train = np.array([up.labels[h] for h in up.train_ids])
    X_test = np.stack([feats[h] for h in up.test_ids])
    y_test = np.array([up.labels[h] for h in up.test_ids])

    scaler = None
    if up.config.standardize:
        scaler = classify.Standardizer.fit(X_train)
        X_train, X_test = scaler.transform(X_train), scaler.transform(X_test)

    results, models = {}, {}
    for name in up.config.classifiers:
        with stage(f"classifier.{name}", _TRAINING, timings):
            model = fit_classifier(name, X_train, y_train, up.train_ids, up.split,
                                   up.config.classifier_params[name])
            scores = model.predict_proba(X_test)
            results[name] = metrics.metric_report(scores, y_test)
            models[name] = model
        logger.info("%-8s %-6s auc=%.4f auc_pr=%.4f", setting, name,
                    results[name]["auc"], results[name]["auc_pr"])
    return SettingResult(setting, results, models, weights, head, feats, scaler)


def train_refiners_for(up: Upstream, timings: dict) -> siamese.RefinerBundle:
    with stage("siamese", _TRAINING, timings):
        train_notes = [n for n in up.raw if n.admission_id in up.split.train_ids]
        return fit_refiners(train_notes, up.labels, up.split, up.config.siamese)


# ---------------------------------------------------------------------------
# reports and artifacts
# ---------------------------------------------------------------------------


def _dump_json(path: Path, data) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_upstream(out: Path, up: Upstream) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(out / "split.json", up.split.to_json())
    up.vocab.save(out / "vocab.json")
    up.word_vectors.save(out / "word2vec.bin")
    up.word_vectors.export_json(out / "word2vec.json", up.vocab)


def _write_setting(out: Path, result: SettingResult) -> None:
    models_dir = out / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    for name, model in result.models.items():
        classify.save_model(model, models_dir / f"{result.setting}_{name}.json")
    if result.scaler is not None:
        classify.save_model(result.scaler, models_dir / f"{result.setting}_scaler.json")
    if result.weights is not None:
        weighting.save_weights(out / f"weights_{result.setting}.json", result.weights, result.head)


def _report_header(config: PipelineConfig) -> dict:
    return {
        "config": config.resolved(),
        "config_digest": config.digest(),
        "seed": config.seed,
        "pr_definition": metrics.PR_DEFINITION,
    }


def run_pipeline(config: PipelineConfig, setting: str | None = None) -> dict:
    """Run one ablation cell end to end; returns the report dict."""
    setting = setting or config.setting
    up = prepare(config)
    timings = up.timings
    result = run_setting(up, setting, timings=timings)
    report = _report_header(config)
    report.update({"setting": setting, "test_ids": len(up.test_ids), "results": result.metrics})
    if config.output_dir:
        out = Path(config.output_dir)
        _write_upstream(out, up)
        _write_setting(out, result)
        _dump_json(out / "report.json", report)
        _dump_json(out / "timing.json", timings)
    return report


def run_ablation(config: PipelineConfig, settings: Sequence[str] = SETTINGS) -> dict:
    """All four settings x configured classifiers on one shared upstream."""
    up = prepare(config)
    timings = up.timings
    refiners = None
    if any(SETTING_FLAGS[s][0] for s in settings):
        refiners = train_refiners_for(up, timings)
    results = {}
    per_setting = {}
    for s in settings:
        per_setting[s] = run_setting(up, s, refiners, timings)
        results[s] = per_setting[s].metrics
    report = _report_header(config)
    report.update({
        "settings": list(settings),
        "classifiers": list(config.classifiers),
        "test_ids": len(up.test_ids),
        "results": results,
    })
    if config.output_dir:
        out = Path(config.output_dir)
        _write_upstream(out, up)
        if refiners is not None:
            refiners.save(out / "refiners.json")
        for r in per_setting.values():
            _write_setting(out, r)
        _dump_json(out / "report.json", report)
        write_ablation_csv(out / "ablation.csv", report)
        _dump_json(out / "timing.json", timings)
    return report


def ablation_rows(report: dict) -> list[tuple[str, str, float, float]]:
    rows = []
    for s in report["settings"]:
        for c in report["classifiers"]:
            cell = report["results"][s][c]
            rows.append((s, c, cell["auc"], cell["auc_pr"]))
    return rows


def write_ablation_csv(path, report: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["setting", "classifier", "auc", "auc_pr"])
        for s, c, auc, ap in ablation_rows(report):
            w.writerow([s, c, repr(auc), repr(ap)])
