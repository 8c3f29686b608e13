"""Mention corpus loading, normalization and deduplication.

The corpus TSV has a header ``mention_id, document_id, text, code``.  Rows
whose code is ``CONCEPT_LESS`` or a ``+``-joined list of codes are dropped on
load, so every surviving record carries exactly one concept code.
"""

from __future__ import annotations

import csv
import json
import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

logger = logging.getLogger(__name__)

CONCEPT_LESS = "CONCEPT_LESS"
AMBIGUOUS_SEPARATOR = "+"
TSV_HEADER = ("mention_id", "document_id", "text", "code")

_APOSTROPHES = {"'", "’", "ʼ"}
_HYPHENS = {"-", "‐", "‑"}

PathLike = Union[str, Path]


class CorpusFormatError(ValueError):
    """Raised when a corpus file violates the TSV or JSON contract."""


def normalize_text(raw: str) -> List[str]:
    """Lowercase ``raw``, strip punctuation and split on whitespace.

    Apostrophes and hyphens survive only between two alphanumeric
    characters ("can't", "light-headed"); curly apostrophes are folded to
    ``'``.  Every other Unicode punctuation character becomes a space.

    >>> normalize_text("Can't fall ASLEEP!!")
    ["can't", 'fall', 'asleep']
    """
    text = unicodedata.normalize("NFC", raw).lower()
    out = []
    for i, ch in enumerate(text):
        if unicodedata.category(ch).startswith("P"):
            inner = 0 < i < len(text) - 1 and text[i - 1].isalnum() and text[i + 1].isalnum()
            if inner and ch in _APOSTROPHES:
                out.append("'")
            elif inner and ch in _HYPHENS:
                out.append("-")
            else:
                out.append(" ")
        else:
            out.append(ch)
    return "".join(out).split()


@dataclass(frozen=True)
class MentionRecord:
    """One annotated mention phrase and its gold concept code."""

    mention_id: str
    raw_text: str
    tokens: tuple
    code: str
    source_doc: str

    @property
    def phrase(self) -> str:
        return " ".join(self.tokens)


def dedup_key(record: MentionRecord) -> str:
    """Key under which two records count as the same mention for fold building."""
    return f"{' '.join(record.tokens)}|{record.code}"


@dataclass
class Corpus:
    """Filtered mention records plus a dense label index over their codes.

    Labels are assigned in first-occurrence order of the codes in
    ``records``.
    """

    records: List[MentionRecord]
    codes: List[str] = field(init=False)
    label_index: Dict[str, int] = field(init=False)
    dropped: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        seen: Dict[str, int] = {}
        for rec in self.records:
            if rec.code not in seen:
                seen[rec.code] = len(seen)
        self.label_index = seen
        self.codes = list(seen)
        self._by_id = {rec.mention_id: rec for rec in self.records}
        if len(self._by_id) != len(self.records):
            dup = [k for k, n in Counter(r.mention_id for r in self.records).items() if n > 1]
            raise CorpusFormatError(f"duplicate mention_id: {dup[0]!r}")

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, mention_id: object) -> bool:
        return mention_id in self._by_id

    @property
    def num_codes(self) -> int:
        return len(self.codes)

    @property
    def stats(self) -> Dict[str, int]:
        return {
            "total": len(self.records),
            "unique_codes": len(self.codes),
            "unique_mentions": len({rec.phrase for rec in self.records}),
            "dropped_concept_less": self.dropped.get("concept_less", 0),
            "dropped_ambiguous": self.dropped.get("ambiguous", 0),
        }

    def label_of(self, code: str) -> int:
        return self.label_index[code]

    def code_of(self, label: int) -> str:
        return self.codes[label]

    def get(self, mention_id: str) -> MentionRecord:
        return self._by_id[mention_id]

    def select(self, mention_ids: Iterable[str]) -> List[MentionRecord]:
        return [self._by_id[m] for m in mention_ids]

    def to_dict(self) -> dict:
        return {
            "records": [
                {
                    "mention_id": r.mention_id,
                    "document_id": r.source_doc,
                    "text": r.raw_text,
                    "tokens": list(r.tokens),
                    "code": r.code,
                }
                for r in self.records
            ],
            "codes": list(self.codes),
            "dropped": dict(sorted(self.dropped.items())),
            "stats": self.stats,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Corpus":
        records = [
            MentionRecord(
                mention_id=r["mention_id"],
                raw_text=r["text"],
                tokens=tuple(r["tokens"]),
                code=r["code"],
                source_doc=r["document_id"],
            )
            for r in data["records"]
        ]
        corpus = cls(records, dropped=dict(data.get("dropped", {})))
        if "codes" in data and list(data["codes"]) != corpus.codes:
            raise CorpusFormatError("label order in JSON does not match record order")
        return corpus

    def save(self, path: PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, ensure_ascii=False) + "\n", encoding="utf-8")


def make_record(mention_id: str, text: str, code: str, source_doc: str = "") -> MentionRecord:
    """Build a normalized record; raises if the text has no tokens."""
    tokens = normalize_text(text)
    if not tokens:
        raise CorpusFormatError(f"mention {mention_id!r} has no tokens after normalization")
    return MentionRecord(mention_id, text, tuple(tokens), code, source_doc)


def _read_tsv(path: Path) -> tuple:
    records: List[MentionRecord] = []
    dropped = Counter()
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TSV_HEADER:
            raise CorpusFormatError(f"{path}:1: expected header {TSV_HEADER}, got {header}")
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise CorpusFormatError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            mention_id, doc_id, text, code = (c.strip() for c in row)
            if not mention_id or not code:
                raise CorpusFormatError(f"{path}:{lineno}: empty mention_id or code")
            if code == CONCEPT_LESS:
                dropped["concept_less"] += 1
                continue
            if AMBIGUOUS_SEPARATOR in code:
                dropped["ambiguous"] += 1
                continue
            tokens = normalize_text(text)
            if not tokens:
                raise CorpusFormatError(f"{path}:{lineno}: mention text has no tokens")
            records.append(MentionRecord(mention_id, text, tuple(tokens), code, doc_id))
    return records, dict(dropped)


def load_corpus(path: PathLike, format: str = "auto") -> Corpus:
    """Load a corpus from a TSV export or from JSON written by :meth:`Corpus.save`.

    Args:
        path: corpus file.
        format: ``"tsv"``, ``"json"`` or ``"auto"`` (decided by file suffix).
    """
    path = Path(path)
    if format == "auto":
        format = "json" if path.suffix.lower() == ".json" else "tsv"
    if format == "json":
        return Corpus.from_dict(json.loads(path.read_text(encoding="utf-8")))
    if format != "tsv":
        raise ValueError(f"unknown corpus format {format!r}")
    records, dropped = _read_tsv(path)
    corpus = Corpus(records, dropped=dropped)
    logger.info("loaded %d mentions over %d codes from %s", len(corpus), corpus.num_codes, path)
    return corpus


def write_corpus_tsv(records: Sequence[MentionRecord], path: PathLike) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(TSV_HEADER) + "\n")
        for r in records:
            fh.write(f"{r.mention_id}\t{r.source_doc}\t{r.raw_text}\t{r.code}\n")
