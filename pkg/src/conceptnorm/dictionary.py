"""Concept dictionary built from a two-column ``code<TAB>term`` terminology export."""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple, Union

from .corpus import Corpus, CorpusFormatError, normalize_text

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
DICT_HEADER = ("code", "term")

Term = Tuple[str, ...]


@dataclass
class ConceptDictionary:
    """Synonym terms per concept code, aligned with a corpus label index.

    ``codes[i]`` is the code with corpus label ``i``; ``synonyms[i]`` its
    token-list terms in source order.
    """

    codes: List[str]
    synonyms: List[List[Term]]
    concat_docs: List[Term] = field(init=False)

    def __post_init__(self) -> None:
        if len(self.codes) != len(self.synonyms):
            raise ValueError("codes and synonyms differ in length")
        for code, terms in zip(self.codes, self.synonyms):
            if not terms or any(len(t) == 0 for t in terms):
                raise ValueError(f"code {code!r} has an empty synonym list or an empty term")
        self.concat_docs = [tuple(tok for term in terms for tok in term) for terms in self.synonyms]

    def __len__(self) -> int:
        return len(self.codes)

    def terms_of(self, code: str) -> List[Term]:
        return self.synonyms[self.codes.index(code)]

    def first_term(self, code: str) -> str:
        try:
            return " ".join(self.terms_of(code)[0])
        except ValueError:
            return ""

    def to_dict(self) -> dict:
        return {
            "codes": list(self.codes),
            "synonyms": [[list(t) for t in terms] for terms in self.synonyms],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ConceptDictionary":
        return cls(list(data["codes"]), [[tuple(t) for t in terms] for terms in data["synonyms"]])

    def save(self, path: PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), ensure_ascii=False) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: PathLike) -> "ConceptDictionary":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def check_aligned(self, corpus: Corpus) -> None:
        if self.codes != corpus.codes:
            raise ValueError("dictionary codes are not aligned with the corpus label index")


def read_terms(source: PathLike) -> Dict[str, List[Term]]:
    """Read ``code<TAB>term`` rows into normalized term lists.

    Terms that normalize to nothing are skipped; duplicate normalized terms
    under one code are kept once.
    """
    source = Path(source)
    terms: Dict[str, List[Term]] = defaultdict(list)
    with source.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != DICT_HEADER:
            raise CorpusFormatError(f"{source}:1: expected header {DICT_HEADER}, got {header}")
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2 or not row[0].strip():
                raise CorpusFormatError(f"{source}:{lineno}: expected 'code<TAB>term'")
            code = row[0].strip()
            tokens = tuple(normalize_text(row[1]))
            if not tokens:
                logger.warning("%s:%d: term for %s is empty after normalization", source, lineno, code)
                continue
            if tokens not in terms[code]:
                terms[code].append(tokens)
    return dict(terms)


def build_dictionary(source: PathLike, corpus: Corpus) -> ConceptDictionary:
    """Restrict a terminology export to the corpus codes.

    Codes without any usable term fall back to their most frequent corpus
    mention (ties go to the earliest mention).
    """
    terms = read_terms(source)
    synonyms: List[List[Term]] = []
    fallbacks = 0
    for code in corpus.codes:
        found = terms.get(code)
        if found:
            synonyms.append(list(found))
            continue
        counts = Counter(rec.tokens for rec in corpus.records if rec.code == code)
        best = max(counts.items(), key=lambda kv: kv[1])[0]
        synonyms.append([tuple(best)])
        fallbacks += 1
    if fallbacks:
        logger.info("%d of %d codes had no dictionary terms; used corpus mentions", fallbacks, len(corpus.codes))
    return ConceptDictionary(list(corpus.codes), synonyms)
