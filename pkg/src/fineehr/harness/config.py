"""Pipeline configuration: YAML tree + ``--set key=value`` overrides.

A config is a nested mapping.  Defaults are filled in, overrides applied,
unknown keys rejected, and the result turned into typed parameter objects.
Stage seeds not given explicitly are derived from the master seed and the
stage name, so changing one stage's seed leaves the others alone.
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from ..classify import CLASSIFIERS
from ..corpus import SyntheticConfig
from ..embed import Word2VecParams
from ..errors import ConfigError
from ..seeds import derive_seed
from ..siamese import SiameseTrainParams
from ..weighting import WeightTrainParams

SETTINGS = ("baseline", "metric", "weight", "full")
SETTING_FLAGS = {
    "baseline": (False, False),
    "metric": (True, False),
    "weight": (False, True),
    "full": (True, True),
}

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "data": {
        "synthetic": None,
        "notes_csv": None,
        "admissions_csv": None,
        "allow_missing_id": False,
    },
    "exclude_categories": [],
    "split": {"test_fraction": 0.2, "seed": None},
    "textprep": {"min_count": 2},
    "word2vec": {
        "dim": 64, "window": 5, "negatives": 5, "epochs": 10,
        "learning_rate": 0.025, "subsample_threshold": 1e-3, "seed": None,
    },
    "siamese": {
        "enabled": True, "margin": 1.0, "epochs": 20, "learning_rate": 0.01,
        "pairs_per_epoch": None, "hidden_multiplier": 2.0, "hidden_layers": 1,
        "balanced": True, "seed": None,
    },
    "weighting": {
        "enabled": True, "epochs": 200, "learning_rate": 0.05, "hidden": 16,
        "renormalize": False, "feature": "pool", "seed": None,
    },
    "classifiers": {
        "selected": ["logreg", "mlp"],
        "standardize": True,
        "logreg": {"l2": 1e-3, "epochs": 500, "lr": 0.1},
        "mlp": {"hidden": 32, "epochs": 500, "lr": 0.1, "batch_size": 32, "seed": None},
    },
    "output_dir": None,
}

# subtrees whose keys are free-form (validated by their own dataclass)
_OPEN_KEYS = {("data", "synthetic")}


@dataclass
class PipelineConfig:
    tree: dict
    seed: int
    synthetic: SyntheticConfig | None
    notes_csv: str | None
    admissions_csv: str | None
    allow_missing_id: bool
    exclude_categories: list[str]
    test_fraction: float
    split_seed: int
    min_count: int
    word2vec: Word2VecParams
    siamese: SiameseTrainParams
    siamese_enabled: bool
    weighting: WeightTrainParams
    weighting_enabled: bool
    renormalize: bool
    feature: str
    classifiers: list[str]
    classifier_params: dict[str, dict] = field(default_factory=dict)
    standardize: bool = True
    output_dir: str | None = None

    @property
    def setting(self) -> str:
        for name, flags in SETTING_FLAGS.items():
            if flags == (self.siamese_enabled, self.weighting_enabled):
                return name
        raise AssertionError("unreachable")

    def resolved(self) -> dict:
        """The full config tree as echoed into reports (output_dir omitted)."""
        tree = copy.deepcopy(self.tree)
        tree.pop("output_dir", None)
        return tree

    def digest(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads exponent floats without a dot (``1e-3``)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^[-+]?(?:[0-9][0-9_]*(?:\.[0-9_]*)?|\.[0-9_]+)[eE][-+]?[0-9]+$"""),
    list("-+0123456789."),
)


def _load_yaml(stream):
    return yaml.load(stream, Loader=_Loader)


def packaged_config(name: str) -> Path:
    ref = resources.files("fineehr") / "configs" / f"{name}.yaml"
    with resources.as_file(ref) as p:
        return Path(p)


def read_tree(path: str | Path | None) -> dict:
    if path is None:
        path = packaged_config("default")
    p = Path(path)
    if not p.exists() and not p.suffix:
        p = packaged_config(str(path))
    try:
        with open(p, encoding="utf-8") as fh:
            tree = _load_yaml(fh) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return tree


def _merge(base: dict, update: dict, path=()) -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        here = path + (key,)
        if key not in out:
            raise ConfigError(f"unknown config key {'.'.join(map(str, here))!r}")
        if isinstance(value, dict) and isinstance(out[key], dict) and here not in _OPEN_KEYS:
            out[key] = _merge(out[key], value, here)
        else:
            out[key] = copy.deepcopy(value)
    return out


def apply_overrides(tree: dict, overrides: list[str]) -> dict:
    tree = copy.deepcopy(tree)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = _load_yaml(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"--set {key}: cannot parse value {raw!r}: {exc}") from None
        parts = key.strip().split(".")
        node = tree
        for p in parts[:-1]:
            if node.get(p) is None:
                node[p] = {}
            node = node[p]
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {p!r} is not a mapping")
        node[parts[-1]] = value
    return tree


def load_config(path=None, overrides: list[str] | None = None, seed: int | None = None,
                setting: str | None = None, output_dir: str | None = None) -> PipelineConfig:
    tree = apply_overrides(read_tree(path), overrides or [])
    if seed is not None:
        tree["seed"] = seed
    if setting is not None:
        if setting not in SETTING_FLAGS:
            raise ConfigError(f"unknown setting {setting!r}; choose from {', '.join(SETTINGS)}")
        metric, weight = SETTING_FLAGS[setting]
        tree.setdefault("siamese", {})["enabled"] = metric
        tree.setdefault("weighting", {})["enabled"] = weight
    if output_dir is not None:
        tree["output_dir"] = str(output_dir)
    return build_config(tree)


def build_config(tree: dict) -> PipelineConfig:
    tree = _merge(DEFAULTS, tree)
    try:
        return _build(tree)
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None


def _stage_seed(master: int, section: dict, stage: str) -> int:
    s = section.get("seed")
    return derive_seed(master, stage) if s is None else int(s)


def _build(tree: dict) -> PipelineConfig:
    master = int(tree["seed"])
    data = tree["data"]
    synthetic = None
    has_csv = data["notes_csv"] is not None or data["admissions_csv"] is not None
    if data["synthetic"] is not None:
        if has_csv:
            raise ConfigError("data: give either synthetic or notes_csv/admissions_csv, not both")
        syn = dict(data["synthetic"])
        if syn.get("seed") is None:
            syn["seed"] = derive_seed(master, "synthetic")
        synthetic = SyntheticConfig(**syn)
    elif not (data["notes_csv"] and data["admissions_csv"]):
        raise ConfigError("data: need a synthetic section or both notes_csv and admissions_csv")

    w2v = dict(tree["word2vec"])
    w2v["seed"] = _stage_seed(master, w2v, "word2vec")

    sia = dict(tree["siamese"])
    enabled_metric = bool(sia.pop("enabled"))
    sia["seed"] = _stage_seed(master, sia, "siamese")

    wt = dict(tree["weighting"])
    enabled_weight = bool(wt.pop("enabled"))
    renormalize = bool(wt.pop("renormalize"))
    feature = wt.pop("feature")
    if feature not in ("pool", "hidden"):
        raise ConfigError("weighting.feature must be 'pool' or 'hidden'")
    wt["seed"] = _stage_seed(master, wt, "weighting")

    clf = tree["classifiers"]
    selected = list(clf["selected"])
    if not selected:
        raise ConfigError("classifiers.selected must name at least one classifier")
    for name in selected:
        if name not in CLASSIFIERS:
            raise ConfigError(f"unknown classifier {name!r}; available: {', '.join(CLASSIFIERS)}")
    if len(set(selected)) != len(selected):
        raise ConfigError("classifiers.selected lists a classifier twice")
    params = {"logreg": dict(clf["logreg"]), "mlp": dict(clf["mlp"])}
    params["mlp"]["seed"] = _stage_seed(master, params["mlp"], "classifier.mlp")

    test_fraction = float(tree["split"]["test_fraction"])
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("split.test_fraction must lie in (0, 1)")
    min_count = int(tree["textprep"]["min_count"])
    if min_count < 1:
        raise ConfigError("textprep.min_count must be >= 1")

    return PipelineConfig(
        tree=tree,
        seed=master,
        synthetic=synthetic,
        notes_csv=data["notes_csv"],
        admissions_csv=data["admissions_csv"],
        allow_missing_id=bool(data["allow_missing_id"]),
        exclude_categories=list(tree["exclude_categories"] or []),
        test_fraction=test_fraction,
        split_seed=_stage_seed(master, tree["split"], "split"),
        min_count=min_count,
        word2vec=Word2VecParams(**w2v),
        siamese=SiameseTrainParams(**sia),
        siamese_enabled=enabled_metric,
        weighting=WeightTrainParams(**wt),
        weighting_enabled=enabled_weight,
        renormalize=renormalize,
        feature=feature,
        classifiers=selected,
        classifier_params=params,
        standardize=bool(clf["standardize"]),
        output_dir=tree.get("output_dir"),
    )
