"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training failure.
Dataset directories are looked up under ``$ASMOTE_DATA_ROOT`` unless a path
is given explicitly.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import corpus
from .corpus import CorpusError
from .evaluation import export_attention, format_prf_table, format_stats_table, triplet_prf
from .training import (
    DATA_ROOT_ENV, TrainConfig, TrainingDivergedError, apply_overrides, load_config, run_experiment,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAIN = 0, 1, 2, 3
DATASETS = ("14res", "14lap", "15res", "16res")

logger = logging.getLogger("asmote")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _dataset_dir(name: str, data_root: str | None) -> Path:
    path = Path(name)
    if path.is_dir():
        return path
    root = data_root or os.environ.get(DATA_ROOT_ENV)
    if root is None:
        raise CorpusError(f"{name!r} is not a directory and ${DATA_ROOT_ENV} is not set")
    return Path(root) / name


def cmd_build_data(args) -> int:
    train = corpus.build_dataset(args.semeval_train, args.towe_train, "train")
    test = corpus.build_dataset(args.semeval_test, args.towe_test, "test")
    dev_ids = None
    if args.dev_ids:
        dev_ids = [line.strip() for line in Path(args.dev_ids).read_text().splitlines() if line.strip()]
    train, dev = corpus.split_dev(train, args.dev_fraction, args.seed, dev_ids)
    out = Path(args.out)
    stats = {}
    for split in (train, dev, test):
        corpus.save_split(split, out / f"{split.name}.jsonl")
        stats[split.name] = corpus.split_stats(split)
    print(format_stats_table({out.name: stats}))
    return EXIT_OK


def cmd_stats(args) -> int:
    names = args.datasets
    if not names:
        root = args.data_root or os.environ.get(DATA_ROOT_ENV)
        names = [d for d in DATASETS if root and (Path(root) / d).is_dir()]
        if not names:
            raise CorpusError(f"no datasets found; pass names or set ${DATA_ROOT_ENV}")
    table = {}
    for name in names:
        splits = corpus.load_dataset(_dataset_dir(name, args.data_root))
        table[Path(name).name] = {s: corpus.split_stats(split) for s, split in splits.items()}
    print(format_stats_table(table))
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    data = load_config(args.config) if args.config else {}
    flags = {
        "variant": args.variant, "dataset": args.dataset, "data_dir": args.data_dir,
        "embedding_path": args.embeddings, "pretrained_path": args.pretrained, "runs": args.runs,
        "seeds": args.seeds, "max_epochs": args.max_epochs, "patience": args.patience,
        "batch_size": args.batch_size, "learning_rate": args.lr, "workers": args.workers,
        "run_dir": args.run_dir, "save_models": args.save_models or None, "device": args.device,
    }
    data = apply_overrides(data, args.set or ())
    data.update({k: v for k, v in flags.items() if v is not None})
    if "seeds" in data and "runs" not in data:
        data["runs"] = len(data["seeds"])
    return TrainConfig.from_dict(data)


def cmd_train(args) -> int:
    try:
        config = _train_config(args)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    manifest = run_experiment(config)
    print(json.dumps({"variant": config.variant, "dataset": config.dataset, "average": manifest.average},
                     indent=2))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    gold_split = corpus.remove_conflict(corpus.load_split(args.gold))
    gold = corpus.gold_triplets(gold_split)
    pred = corpus.read_triplets(args.pred)
    report = triplet_prf(gold, pred)
    if args.json:
        print(json.dumps({"gold": str(args.gold), "pred": str(args.pred), **report.to_dict()}))
    else:
        print(format_prf_table({args.name: {Path(args.gold).parent.name or "data": report}}))
    return EXIT_OK


def _load_model(path):
    from .estimator import AspectGuidedExtractor

    if not Path(path).is_file():
        raise CorpusError(f"model file not found: {path}")
    return AspectGuidedExtractor.load(path)


def cmd_predict(args) -> int:
    model = _load_model(args.model)
    split = corpus.load_split(args.data)
    triplets = model.predict(split.sentences, opinion_source=args.opinion_source)
    corpus.write_triplets(args.out, ((s.id, s.tokens, t) for s, t in zip(split, triplets)))
    return EXIT_OK


def cmd_merge_aste(args) -> int:
    rows = corpus.read_aste_file(args.input)
    corpus.write_triplets(args.output, ((sid, tokens, corpus.merge_aste(ts)) for sid, tokens, ts in rows))
    return EXIT_OK


def cmd_export_attention(args) -> int:
    model = _load_model(args.model)
    split = corpus.load_split(args.data)
    wanted = set(args.sentence_id or ())
    records = []
    for sentence in split:
        if wanted and sentence.id not in wanted:
            continue
        aspects = [a.aspect for a in sentence.aspects if not a.is_conflict]
        if not aspects:
            aspects = sorted(model.predict_aspects([sentence])[0])
        for aspect in aspects:
            records.append({
                "id": sentence.id, "aspect": aspect.to_list(),
                "attention": export_attention(model, sentence.tokens, aspect),
            })
    if wanted and not records:
        raise CorpusError(f"no sentences with ids {sorted(wanted)}")
    with open(args.out, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="asmote", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("build-data", help="align SemEval XML with TOWE files into train/dev/test JSON lines")
    p.add_argument("--semeval-train", required=True)
    p.add_argument("--towe-train", required=True)
    p.add_argument("--semeval-test", required=True)
    p.add_argument("--towe-test", required=True)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--dev-fraction", type=float, default=0.2)
    p.add_argument("--dev-ids", help="file with one dev sentence id per line (overrides --dev-fraction)")
    p.add_argument("--seed", type=int, default=1234)
    p.set_defaults(func=cmd_build_data)

    p = sub.add_parser("stats", help="print sentence/aspect/triplet/conflict counts")
    p.add_argument("datasets", nargs="*", help=f"dataset names under ${DATA_ROOT_ENV} or directories")
    p.add_argument("--data-root")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser(
        "train", help="train and test a variant over several seeds",
        description="Precedence: command-line flag > --set override > config file > built-in default.",
    )
    p.add_argument("--config", help="JSON file with TrainConfig keys")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--variant")
    p.add_argument("--dataset")
    p.add_argument("--data-dir")
    p.add_argument("--embeddings", help="word-vector text file")
    p.add_argument("--pretrained", help="local pretrained transformer directory")
    p.add_argument("--runs", type=int)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--run-dir")
    p.add_argument("--save-models", action="store_true", help="keep one model file per run in the run dir")
    p.add_argument("--device", help="torch device; defaults to cuda when available")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="exact-match triplet P/R/F1 of a prediction file")
    p.add_argument("--gold", required=True, help="dataset split (JSON lines)")
    p.add_argument("--pred", required=True, help="triplet file written by predict or merge-aste")
    p.add_argument("--name", default="model")
    p.add_argument("--json", action="store_true", help="print one JSON record instead of a table")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="extract triplets with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--opinion-source", choices=("joint", "separate"))
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("merge-aste", help="merge single-opinion ASTE triplets per aspect")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_merge_aste)

    p = sub.add_parser("export-attention", help="write per-token attention weights per aspect")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sentence-id", action="append")
    p.set_defaults(func=cmd_export_attention)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"asmote {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, OSError, json.JSONDecodeError) as exc:
        print(f"asmote {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"asmote {args.command}: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAIN


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
