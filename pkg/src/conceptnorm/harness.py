"""Cross-validated evaluation, per-length breakdowns, error dumps and table rendering."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from .corpus import Corpus, MentionRecord
from .dictionary import ConceptDictionary
from .embeddings import EmbeddingStore
from .folds import FoldPlan
from .models import ModelConfig, Split, TrainedModel, predict_batch, train
from .simfeatures import TFIDF_STRATEGIES, fit_tfidf, similarity_matrix

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
LENGTH_BINS = ("1", "2", "3", "4", "5", "6+")
# mention-length histogram of the filtered CADEC corpus
REFERENCE_LENGTH_COUNTS = {"1": 11, "2": 558, "3": 1064, "4": 739, "5": 531, "6+": 662}
PREDICTION_FIELDS = ("mention_id", "fold", "gold", "predicted", "n_tokens")


@dataclass(frozen=True)
class Prediction:
    mention_id: str
    fold: int
    gold: str
    predicted: str
    n_tokens: int

    @property
    def correct(self) -> bool:
        return self.gold == self.predicted


@dataclass
class ErrorEntry:
    mention_id: str
    text: str
    predicted: str
    predicted_term: str
    gold: str
    gold_term: str


@dataclass
class EvalReport:
    per_fold_accuracy: List[float]
    mean_accuracy: float
    pooled_accuracy: float
    by_length: Dict[str, Dict[str, Optional[float]]]
    errors: List[ErrorEntry]
    config: Dict = field(default_factory=dict)
    k: int = 0
    seed: int = 0
    predictions: List[Prediction] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        data = asdict(self)
        data.pop("predictions")
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        data = dict(data)
        data["errors"] = [ErrorEntry(**e) for e in data.get("errors", [])]
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def save(self, path: PathLike) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: PathLike) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def length_bin(n_tokens: int) -> str:
    return str(n_tokens) if n_tokens < 6 else "6+"


def report_by_length(predictions: Sequence[Prediction], corpus: Optional[Corpus] = None) -> Dict[str, dict]:
    """Mention count and accuracy per token-length bin ("1"-"5", "6+").

    Empty bins report ``accuracy: None``.  With ``corpus``, lengths come from
    the corpus tokens rather than the prediction rows.
    """
    counts = {b: 0 for b in LENGTH_BINS}
    correct = {b: 0 for b in LENGTH_BINS}
    for p in predictions:
        n = len(corpus.get(p.mention_id).tokens) if corpus is not None else p.n_tokens
        b = length_bin(n)
        counts[b] += 1
        correct[b] += p.correct
    return {b: {"count": counts[b], "accuracy": correct[b] / counts[b] if counts[b] else None} for b in LENGTH_BINS}


def dump_errors(
    predictions: Sequence[Prediction], corpus: Corpus, dictionary: ConceptDictionary, limit: Optional[int] = None
) -> List[ErrorEntry]:
    """Mismatched predictions in corpus order with each code's first synonym."""
    position = {rec.mention_id: i for i, rec in enumerate(corpus.records)}
    wrong = sorted((p for p in predictions if not p.correct), key=lambda p: position[p.mention_id])
    if limit is not None:
        wrong = wrong[:limit]
    return [
        ErrorEntry(
            mention_id=p.mention_id,
            text=corpus.get(p.mention_id).raw_text,
            predicted=p.predicted,
            predicted_term=dictionary.first_term(p.predicted),
            gold=p.gold,
            gold_term=dictionary.first_term(p.gold),
        )
        for p in wrong
    ]


def aggregate(
    predictions: Sequence[Prediction],
    corpus: Corpus,
    dictionary: ConceptDictionary,
    k: int,
    config: Optional[dict] = None,
    seed: int = 0,
    error_limit: Optional[int] = 100,
) -> EvalReport:
    """Summarise per-mention predictions into an :class:`EvalReport`."""
    per_fold = []
    for i in range(k):
        fold = [p for p in predictions if p.fold == i]
        per_fold.append(sum(p.correct for p in fold) / len(fold) if fold else 0.0)
    pooled = sum(p.correct for p in predictions) / len(predictions) if predictions else 0.0
    return EvalReport(
        per_fold_accuracy=per_fold,
        mean_accuracy=sum(per_fold) / k if k else 0.0,
        pooled_accuracy=pooled,
        by_length=report_by_length(predictions, corpus),
        errors=dump_errors(predictions, corpus, dictionary, error_limit),
        config=dict(config or {}),
        k=k,
        seed=seed,
        predictions=list(predictions),
    )


def _features(config: ModelConfig, dictionary: ConceptDictionary, store: EmbeddingStore,
              train_tokens: Sequence[Sequence[str]], token_sets: Iterable[Sequence[Sequence[str]]]):
    """Feature matrices for each token list in ``token_sets``, fitted on ``train_tokens`` only."""
    strategy = config.feature_strategy
    if strategy is None:
        return [None for _ in token_sets]
    tfidf = fit_tfidf(dictionary, train_tokens) if strategy in TFIDF_STRATEGIES else None
    return [similarity_matrix(strategy, toks, dictionary, tfidf=tfidf, store=store) for toks in token_sets]


def _check_inputs(config: ModelConfig, corpus: Corpus, dictionary: ConceptDictionary, plan: FoldPlan) -> None:
    config.validate()
    if plan.k < 2:
        raise ValueError("cross-validation needs k >= 2")
    dictionary.check_aligned(corpus)
    missing = [m for m in plan.mention_ids if m not in corpus]
    if missing:
        raise ValueError(f"fold plan references unknown mention {missing[0]!r}")


def train_fold(
    config: ModelConfig,
    corpus: Corpus,
    dictionary: ConceptDictionary,
    plan: FoldPlan,
    store: EmbeddingStore,
    fold_id: int,
) -> tuple:
    """Train on all folds but ``fold_id``; return ``(model, test_records, test_features)``."""
    _check_inputs(config, corpus, dictionary, plan)
    train_ids, test_ids = plan.split(fold_id)
    train_recs = corpus.select(train_ids)
    test_recs = corpus.select(test_ids)
    if not train_recs:
        raise ValueError(f"fold {fold_id} leaves an empty training split")
    train_tokens = [r.tokens for r in train_recs]
    test_tokens = [r.tokens for r in test_recs]
    train_feats, test_feats = _features(config, dictionary, store, train_tokens, [train_tokens, test_tokens])
    split = Split(train_tokens, [corpus.label_of(r.code) for r in train_recs], train_feats)
    extra = [t for toks in test_tokens for t in toks] + [t for doc in dictionary.concat_docs for t in doc]
    model = train(config, split, store, corpus.codes, extra_tokens=extra)
    return model, test_recs, test_feats


def predict_records(model: TrainedModel, records: Sequence[MentionRecord], features, fold: int) -> List[Prediction]:
    labels, _ = predict_batch(model, [r.tokens for r in records], features)
    return [
        Prediction(r.mention_id, fold, r.code, model.codes[int(lab)], len(r.tokens))
        for r, lab in zip(records, labels)
    ]


def evaluate_cv(
    config: ModelConfig,
    corpus: Corpus,
    dictionary: ConceptDictionary,
    plan: FoldPlan,
    store: EmbeddingStore,
    out_dir: Optional[PathLike] = None,
    error_limit: Optional[int] = 100,
) -> EvalReport:
    """k-fold evaluation; with ``out_dir`` the fold models, predictions and report are written there."""
    _check_inputs(config, corpus, dictionary, plan)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    predictions: List[Prediction] = []
    for i in range(plan.k):
        model, test_recs, test_feats = train_fold(config, corpus, dictionary, plan, store, i)
        fold_preds = predict_records(model, test_recs, test_feats, i)
        predictions.extend(fold_preds)
        acc = sum(p.correct for p in fold_preds) / len(fold_preds) if fold_preds else 0.0
        logger.info("fold %d/%d: accuracy %.4f on %d mentions", i + 1, plan.k, acc, len(fold_preds))
        if out is not None:
            model.save(out / f"model_{i}.ckpt")
    report = aggregate(predictions, corpus, dictionary, plan.k, config.to_dict(), plan.seed, error_limit)
    if out is not None:
        write_outputs(report, out)
    return report


def write_predictions(predictions: Sequence[Prediction], path: PathLike) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(PREDICTION_FIELDS)
        for p in predictions:
            writer.writerow([p.mention_id, p.fold, p.gold, p.predicted, p.n_tokens])


def read_predictions(path: PathLike) -> List[Prediction]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        return [
            Prediction(row["mention_id"], int(row["fold"]), row["gold"], row["predicted"], int(row["n_tokens"]))
            for row in reader
        ]


def write_errors_tsv(errors: Sequence[ErrorEntry], path: PathLike) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(["mention_id", "mention", "predicted", "predicted_term", "gold", "gold_term"])
        for e in errors:
            writer.writerow([e.mention_id, e.text, e.predicted, e.predicted_term, e.gold, e.gold_term])


def model_label(config: ModelConfig) -> str:
    name = {"cnn": "CNN", "bilstm": "LSTM", "bigru": "GRU"}[config.encoder]
    return name + ("+A." if config.attention else "")


def model_parameters(config: ModelConfig, embeddings: str = "") -> str:
    parts = [embeddings] if embeddings else []
    if config.encoder == "cnn":
        parts.append(f"{config.feature_maps} feature maps")
    else:
        parts.append(f"{config.hidden_units} hidden units")
    if config.feature_strategy:
        parts.append({"tfidf_all": "TF-IDF (all)", "tfidf_max": "TF-IDF (max)", "w2v_all": "w2v sim. (all)"}[
            config.feature_strategy])
    return ", ".join(parts)


def table1_markdown(rows: Sequence[dict]) -> str:
    """Model / Parameters / Acc. table; each row needs ``model``, ``parameters``, ``accuracy`` (0-1)."""
    lines = ["| Model | Parameters | Acc. |", "|---|---|---:|"]
    for row in rows:
        lines.append(f"| {row['model']} | {row['parameters']} | {100 * row['accuracy']:.2f} |")
    return "\n".join(lines) + "\n"


def by_length_markdown(report: EvalReport) -> str:
    """Mention counts per length bin, then accuracy per bin."""
    def name(b: str) -> str:
        return "6 or longer" if b == "6+" else b

    lines = ["| Length of a mention | # mentions |", "|---|---:|"]
    lines += [f"| {name(b)} | {report.by_length[b]['count']} |" for b in LENGTH_BINS]
    lines += ["", "| Length of a mention | Accuracy |", "|---|---:|"]
    for b in LENGTH_BINS:
        acc = report.by_length[b]["accuracy"]
        lines.append(f"| {name(b)} | {'n/a' if acc is None else f'{100 * acc:.2f}'} |")
    return "\n".join(lines) + "\n"


def check_length_counts(report: EvalReport, reference: Dict[str, int] = REFERENCE_LENGTH_COUNTS) -> List[str]:
    """Bins whose mention counts differ from ``reference``."""
    return [b for b in LENGTH_BINS if report.by_length[b]["count"] != reference[b]]


def write_outputs(report: EvalReport, out_dir: PathLike, embeddings_label: str = "") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    if report.predictions:
        write_predictions(report.predictions, out / "predictions.tsv")
    write_errors_tsv(report.errors, out / "errors.tsv")
    (out / "by_length.md").write_text(by_length_markdown(report), encoding="utf-8")
    if report.config:
        cfg = ModelConfig.from_dict(report.config)
        row = {"model": model_label(cfg), "parameters": model_parameters(cfg, embeddings_label),
               "accuracy": report.mean_accuracy}
        (out / "table1.md").write_text(table1_markdown([row]), encoding="utf-8")


def check_ordering(accuracy: Dict[str, float]) -> List[str]:
    """Flags for violations of ``rnn+attention >= rnn > cnn`` in a results map.

    Keys are ``"rnn+attention"``, ``"rnn"`` and ``"cnn"``; missing keys are skipped.
    """
    flags = []
    if "rnn+attention" in accuracy and "rnn" in accuracy and accuracy["rnn+attention"] < accuracy["rnn"]:
        flags.append(f"rnn+attention ({accuracy['rnn+attention']:.4f}) below rnn ({accuracy['rnn']:.4f})")
    if "rnn" in accuracy and "cnn" in accuracy and not accuracy["rnn"] > accuracy["cnn"]:
        flags.append(f"rnn ({accuracy['rnn']:.4f}) does not exceed cnn ({accuracy['cnn']:.4f})")
    return flags


def sweep(
    grid: dict,
    corpus: Corpus,
    dictionary: ConceptDictionary,
    plan: FoldPlan,
    stores: Dict[str, EmbeddingStore],
    out_dir: Optional[PathLike] = None,
) -> List[dict]:
    """Run a grid of configurations and collect one table row per entry.

    ``grid`` has an optional ``base`` config dict and a ``rows`` list; each row
    holds config overrides plus an ``embeddings`` key naming an entry of
    ``stores``.
    """
    base = dict(grid.get("base", {}))
    results = []
    for n, row in enumerate(grid["rows"]):
        row = dict(row)
        emb = row.pop("embeddings", None) or next(iter(stores))
        label = row.pop("label", None)
        config = ModelConfig.from_dict({**base, **row})
        run_dir = None if out_dir is None else Path(out_dir) / f"row_{n:02d}"
        report = evaluate_cv(config, corpus, dictionary, plan, stores[emb], out_dir=run_dir)
        results.append({
            "model": label or model_label(config),
            "parameters": model_parameters(config, emb),
            "accuracy": report.mean_accuracy,
            "pooled_accuracy": report.pooled_accuracy,
            "per_fold_accuracy": report.per_fold_accuracy,
        })
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "table1.md").write_text(table1_markdown(results), encoding="utf-8")
        (Path(out_dir) / "sweep.json").write_text(json.dumps(results, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return results
