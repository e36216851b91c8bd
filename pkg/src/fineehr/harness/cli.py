"""Command-line entry point: ``fineehr {generate,run,ablate,inspect}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .. import corpus, embed, textprep, weighting
from ..errors import ConfigError, DataError, FineEHRError
from .config import SETTINGS, load_config
from .pipeline import ablation_rows, run_ablation, run_pipeline

logger = logging.getLogger("fineehr")


def _common(p: argparse.ArgumentParser, out_required=True):
    p.add_argument("--config", default=None,
                   help="YAML config path, or the name of a packaged config (default: 'default')")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="master seed override")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value by dotted key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fineehr", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic notes/admissions CSV pair")
    _common(p)

    p = sub.add_parser("run", help="run one ablation setting end to end")
    _common(p)
    p.add_argument("--setting", choices=SETTINGS, default=None,
                   help="override the siamese/weighting enable flags")

    p = sub.add_parser("ablate", help="run all four settings on a shared upstream")
    _common(p)

    p = sub.add_parser("inspect", help="show learned category weights and word neighbours")
    p.add_argument("--out", required=True, help="output directory of a previous run")
    p.add_argument("--word", action="append", default=[], help="word to show neighbours for")
    p.add_argument("-k", type=int, default=10, help="number of neighbours")
    return parser


def cmd_generate(args) -> int:
    config = load_config(args.config, args.overrides, args.seed)
    if config.synthetic is None:
        raise ConfigError("generate needs a data.synthetic section")
    notes, admissions = corpus.generate_synthetic(config.synthetic)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "notes.csv", "wb") as fh:
        corpus.write_notes_csv(notes, fh)
    with open(out / "admissions.csv", "wb") as fh:
        corpus.write_admissions_csv(admissions, fh)
    print(f"wrote {len(notes)} notes for {len(admissions)} admissions to {out}")
    return 0


def cmd_run(args) -> int:
    config = load_config(args.config, args.overrides, args.seed, args.setting, args.out)
    report = run_pipeline(config)
    for name, cell in report["results"].items():
        print(f"{report['setting']:<9} {name:<7} auc={cell['auc']:.4f} auc_pr={cell['auc_pr']:.4f}")
    return 0


def cmd_ablate(args) -> int:
    config = load_config(args.config, args.overrides, args.seed, output_dir=args.out)
    report = run_ablation(config)
    print(f"{'setting':<9} {'clf':<7} {'auc':>7} {'auc_pr':>7}")
    for s, c, auc, ap in ablation_rows(report):
        print(f"{s:<9} {c:<7} {auc:7.4f} {ap:7.4f}")
    return 0


def cmd_inspect(args) -> int:
    out = Path(args.out)
    found = False
    for path in sorted(out.glob("weights_*.json")):
        found = True
        weights, _ = weighting.load_weights(path)
        print(f"{path.stem}:")
        for c, w in weights.as_dict().items():
            print(f"  {c:<24} {w:+.4f}")
    if not found:
        print("no learned category weights in this run")
    if args.word:
        vocab_path, vec_path = out / "vocab.json", out / "word2vec.bin"
        if not vocab_path.exists() or not vec_path.exists():
            raise DataError(f"{out} has no vocab.json / word2vec.bin")
        vocab = textprep.Vocabulary.load(vocab_path)
        vectors = embed.EmbeddingMatrix.load(vec_path)
        for word in args.word:
            try:
                neighbours = embed.nearest_words(word.lower(), vectors, vocab, args.k)
            except KeyError as exc:
                print(f"{word}: {exc.args[0]}")
                continue
            print(f"{word}: " + ", ".join(f"{t} ({s:.3f})" for t, s in neighbours))
    return 0


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "ablate": cmd_ablate, "inspect": cmd_inspect}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except FineEHRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
