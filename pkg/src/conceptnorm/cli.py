"""Command line entry point: ``conceptnorm <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .corpus import load_corpus
from .dictionary import ConceptDictionary, build_dictionary
from .embeddings import EmbeddingStore
from .folds import FoldPlan, leakage_rate, make_folds, naive_folds
from .harness import (
    aggregate,
    check_length_counts,
    evaluate_cv,
    read_predictions,
    sweep,
    table1_markdown,
    train_fold,
    write_outputs,
)
from .models import ModelConfig
from .simfeatures import STRATEGIES, TFIDF_STRATEGIES, fit_tfidf, similarity_matrix, write_feature_matrix

logger = logging.getLogger("conceptnorm")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path: Optional[str], overrides: List[str]) -> ModelConfig:
    data = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        data[key.strip()] = _parse_value(value)
    config = ModelConfig.from_dict(data)
    config.validate()
    return config


def _load_inputs(args, need_store: bool = True):
    corpus = load_corpus(args.corpus)
    dictionary = ConceptDictionary.load(args.dict)
    dictionary.check_aligned(corpus)
    store = None
    if need_store:
        vocab = {t for r in corpus.records for t in r.tokens} | {t for d in dictionary.concat_docs for t in d}
        store = EmbeddingStore.load(args.embeddings, restrict=vocab)
    return corpus, dictionary, store


def cmd_ingest(args) -> int:
    corpus = load_corpus(args.corpus, format=args.format)
    corpus.save(args.out)
    print(json.dumps(corpus.stats, sort_keys=True))
    return 0


def cmd_build_dict(args) -> int:
    corpus = load_corpus(args.corpus)
    dictionary = build_dictionary(args.umls, corpus)
    dictionary.save(args.out)
    print(json.dumps({"codes": len(dictionary), "terms": sum(len(t) for t in dictionary.synonyms)}))
    return 0


def cmd_make_folds(args) -> int:
    corpus = load_corpus(args.corpus)
    plan = (naive_folds if args.naive else make_folds)(corpus, args.k, args.seed)
    plan.save(args.out)
    print(json.dumps({"k": plan.k, "sizes": [len(f) for f in plan.folds], "leakage": leakage_rate(plan, corpus)}))
    return 0


def cmd_leakage(args) -> int:
    corpus = load_corpus(args.corpus)
    print(f"{leakage_rate(FoldPlan.load(args.folds), corpus):.6f}")
    return 0


def cmd_featurize(args) -> int:
    corpus, dictionary, store = _load_inputs(args, need_store=args.strategy == "w2v_all")
    plan = FoldPlan.load(args.folds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(plan.k):
        train_ids, test_ids = plan.split(i)
        train_tokens = [r.tokens for r in corpus.select(train_ids)]
        tfidf = fit_tfidf(dictionary, train_tokens) if args.strategy in TFIDF_STRATEGIES else None
        for part, ids in (("train", train_ids), ("test", test_ids)):
            toks = [r.tokens for r in corpus.select(ids)]
            matrix = similarity_matrix(args.strategy, toks, dictionary, tfidf=tfidf, store=store)
            write_feature_matrix(matrix, out / f"fold{i}_{part}", args.strategy, ids, dictionary.codes)
    print(f"wrote {2 * plan.k} feature matrices to {out}")
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config, args.set)
    corpus, dictionary, store = _load_inputs(args)
    plan = FoldPlan.load(args.folds)
    model, _, _ = train_fold(config, corpus, dictionary, plan, store, args.fold_id)
    model.save(args.out)
    print(json.dumps({"fold": args.fold_id, "epochs": len(model.history.get("loss", [])),
                      "final_loss": model.history["loss"][-1] if model.history.get("loss") else None}))
    return 0


def cmd_evaluate(args) -> int:
    config = load_config(args.config, args.set)
    corpus, dictionary, store = _load_inputs(args)
    plan = FoldPlan.load(args.folds)
    report = evaluate_cv(config, corpus, dictionary, plan, store, out_dir=args.out, error_limit=args.error_limit)
    write_outputs(report, args.out, embeddings_label=args.embeddings_label or "")
    print(f"mean accuracy {100 * report.mean_accuracy:.2f} (pooled {100 * report.pooled_accuracy:.2f})")
    return 0


def cmd_report(args) -> int:
    run = Path(args.run)
    corpus = load_corpus(args.corpus)
    dictionary = ConceptDictionary.load(args.dict)
    previous = json.loads((run / "report.json").read_text(encoding="utf-8")) if (run / "report.json").exists() else {}
    predictions = read_predictions(run / "predictions.tsv")
    k = previous.get("k") or (max(p.fold for p in predictions) + 1)
    report = aggregate(predictions, corpus, dictionary, k, previous.get("config"), previous.get("seed", 0),
                       args.error_limit)
    out = Path(args.out) if args.out else run
    write_outputs(report, out, embeddings_label=args.embeddings_label or "")
    print(f"mean accuracy {100 * report.mean_accuracy:.2f} (pooled {100 * report.pooled_accuracy:.2f})")
    if args.check_reference_lengths:
        bad = check_length_counts(report)
        print("length bins match reference counts" if not bad else f"length bins differ from reference: {bad}")
        return 1 if bad else 0
    return 0


def cmd_sweep(args) -> int:
    grid = json.loads(Path(args.grid).read_text(encoding="utf-8"))
    corpus = load_corpus(args.corpus)
    dictionary = ConceptDictionary.load(args.dict)
    dictionary.check_aligned(corpus)
    plan = FoldPlan.load(args.folds)
    vocab = {t for r in corpus.records for t in r.tokens} | {t for d in dictionary.concat_docs for t in d}
    stores = {}
    for item in args.embeddings:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem, item
        stores[name] = EmbeddingStore.load(path, restrict=vocab)
    rows = sweep(grid, corpus, dictionary, plan, stores, out_dir=args.out)
    sys.stdout.write(table1_markdown(rows))
    return 0


def cmd_synth(args) -> int:
    from .synthetic import normalization_task

    task = normalization_task(n_mentions=args.mentions, n_codes=args.codes, seed=args.seed)
    paths = task.write(Path(args.out))
    print(json.dumps({k: str(v) for k, v in paths.items()}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conceptnorm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_inputs(p, embeddings=True):
        p.add_argument("--corpus", required=True, help="corpus.json from ingest")
        p.add_argument("--dict", required=True, help="dict.json from build-dict")
        p.add_argument("--folds", required=True, help="folds.json from make-folds")
        if embeddings:
            p.add_argument("--embeddings", required=True, help="word vectors in text word2vec format")

    def add_config(p):
        p.add_argument("--config", help="model config JSON")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field (value parsed as JSON)")

    p = sub.add_parser("ingest", help="parse and filter a corpus TSV")
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", default="auto", choices=["auto", "tsv", "json"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-dict", help="restrict a code/term export to the corpus codes")
    p.add_argument("--umls", required=True, help="TSV with header code<TAB>term")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_dict)

    p = sub.add_parser("make-folds", help="leakage-free grouped k-fold plan")
    p.add_argument("--corpus", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=13)
    p.add_argument("--naive", action="store_true", help="record-level shuffle without dedup (baseline)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_folds)

    p = sub.add_parser("leakage", help="print the train/test exact-match overlap of a fold plan")
    p.add_argument("--corpus", required=True)
    p.add_argument("--folds", required=True)
    p.set_defaults(func=cmd_leakage)

    p = sub.add_parser("featurize", help="write similarity feature matrices per fold")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--folds", required=True)
    p.add_argument("--strategy", required=True, choices=STRATEGIES)
    p.add_argument("--embeddings", help="required for w2v_all")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train one fold's model")
    add_config(p)
    add_inputs(p)
    p.add_argument("--fold-id", type=int, required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="cross-validated training and evaluation")
    add_config(p)
    add_inputs(p)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--error-limit", type=int, default=100)
    p.add_argument("--embeddings-label", help="name shown in table1.md, e.g. HealthVec")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="recompute reports from a run's predictions.tsv")
    p.add_argument("--run", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--dict", required=True)
    p.add_argument("--out", help="output directory (default: the run directory)")
    p.add_argument("--error-limit", type=int, default=100)
    p.add_argument("--embeddings-label")
    p.add_argument("--check-reference-lengths", action="store_true",
                   help="compare length-bin counts with the filtered CADEC histogram")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", help="run a grid of configurations into one table")
    p.add_argument("--grid", required=True)
    add_inputs(p, embeddings=False)
    p.add_argument("--embeddings", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="write a synthetic corpus, dictionary and vectors")
    p.add_argument("--out", required=True)
    p.add_argument("--mentions", type=int, default=300)
    p.add_argument("--codes", type=int, default=10)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
