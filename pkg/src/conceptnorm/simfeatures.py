"""Dictionary-based similarity features: one cosine score per concept code.

Three strategies are supported:

``tfidf_all``
    cosine between the TF-IDF vector of the mention and that of the code's
    concatenated synonym document.
``tfidf_max``
    maximum cosine between the mention and each individual synonym term.
``w2v_all``
    cosine between the averaged word vectors of the mention and of the
    concatenated synonym document.

TF-IDF uses raw term counts, ``idf(t) = ln((1 + N) / (1 + df(t))) + 1`` and
L2-normalized document vectors.  The fitting collection is every
concatenated document, every individual synonym and the training mentions;
test mentions never contribute document frequencies.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .dictionary import ConceptDictionary
from .embeddings import EmbeddingStore, phrase_vector

STRATEGIES = ("tfidf_all", "tfidf_max", "w2v_all")
TFIDF_STRATEGIES = ("tfidf_all", "tfidf_max")

_CHUNK = 512


@dataclass
class TfidfModel:
    """Fitted TF-IDF transform plus cached vectors for one dictionary."""

    vocabulary: Dict[str, int]
    idf: np.ndarray
    doc_count: int
    codes: List[str] = field(default_factory=list)
    concat_matrix: Optional[sp.csr_matrix] = field(default=None, repr=False)
    synonym_matrix: Optional[sp.csr_matrix] = field(default=None, repr=False)
    synonym_offsets: Optional[np.ndarray] = field(default=None, repr=False)

    def transform(self, docs: Sequence[Sequence[str]]) -> sp.csr_matrix:
        """Vectorize token lists into L2-normalized tf-idf rows; unseen tokens are ignored."""
        indptr = [0]
        indices: List[int] = []
        data: List[float] = []
        for doc in docs:
            counts = Counter(self.vocabulary[t] for t in doc if t in self.vocabulary)
            cols = sorted(counts)
            vals = [counts[c] * self.idf[c] for c in cols]
            norm = math.sqrt(sum(v * v for v in vals)) or 1.0
            indices.extend(cols)
            data.extend(v / norm for v in vals)
            indptr.append(len(indices))
        return sp.csr_matrix(
            (np.asarray(data, dtype=np.float64), np.asarray(indices, dtype=np.int64), np.asarray(indptr)),
            shape=(len(docs), len(self.vocabulary)),
        )

    def _check(self, dictionary: ConceptDictionary) -> None:
        if self.concat_matrix is None or self.synonym_matrix is None:
            raise RuntimeError("TF-IDF model is not fitted against a dictionary")
        if list(dictionary.codes) != self.codes:
            raise ValueError("TF-IDF model was fitted with a different dictionary")


@dataclass
class SimilarityFeatureVector:
    strategy: str
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


def fit_tfidf(dictionary: ConceptDictionary, train_mentions: Sequence[Sequence[str]]) -> TfidfModel:
    docs: List[Sequence[str]] = list(dictionary.concat_docs)
    for terms in dictionary.synonyms:
        docs.extend(terms)
    docs.extend(train_mentions)
    if not docs:
        raise ValueError("cannot fit TF-IDF on an empty document collection")

    vocabulary: Dict[str, int] = {}
    df: Counter = Counter()
    for doc in docs:
        for tok in doc:
            if tok not in vocabulary:
                vocabulary[tok] = len(vocabulary)
        df.update(set(doc))
    n = len(docs)
    idf = np.array([math.log((1 + n) / (1 + df[t])) + 1.0 for t in vocabulary], dtype=np.float64)

    model = TfidfModel(vocabulary=vocabulary, idf=idf, doc_count=n, codes=list(dictionary.codes))
    model.concat_matrix = model.transform(dictionary.concat_docs)
    flat = [term for terms in dictionary.synonyms for term in terms]
    model.synonym_matrix = model.transform(flat)
    model.synonym_offsets = np.cumsum([0] + [len(terms) for terms in dictionary.synonyms[:-1]])
    return model


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def _tfidf_all_matrix(model: TfidfModel, mentions: Sequence[Sequence[str]]) -> np.ndarray:
    out = []
    for start in range(0, len(mentions), _CHUNK):
        m = model.transform(mentions[start:start + _CHUNK])
        out.append((m @ model.concat_matrix.T).toarray())
    return np.clip(np.vstack(out), 0.0, 1.0)


def _tfidf_max_matrix(model: TfidfModel, mentions: Sequence[Sequence[str]]) -> np.ndarray:
    out = []
    for start in range(0, len(mentions), _CHUNK):
        m = model.transform(mentions[start:start + _CHUNK])
        sims = (m @ model.synonym_matrix.T).toarray()
        out.append(np.maximum.reduceat(sims, model.synonym_offsets, axis=1))
    return np.clip(np.vstack(out), 0.0, 1.0)


def _w2v_all_matrix(store: EmbeddingStore, dictionary: ConceptDictionary, mentions) -> np.ndarray:
    def unit_rows(vectors: np.ndarray) -> np.ndarray:
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        return np.divide(vectors, norms, out=np.zeros_like(vectors), where=norms > 0)

    codes = unit_rows(np.array([phrase_vector(store, d) for d in dictionary.concat_docs]).reshape(len(dictionary), store.dim))
    ments = unit_rows(np.array([phrase_vector(store, m) for m in mentions]).reshape(len(mentions), store.dim))
    return np.clip(ments @ codes.T, -1.0, 1.0)


def similarity_matrix(
    strategy: str,
    mentions: Sequence[Sequence[str]],
    dictionary: ConceptDictionary,
    tfidf: Optional[TfidfModel] = None,
    store: Optional[EmbeddingStore] = None,
) -> np.ndarray:
    """Feature matrix of shape ``(len(mentions), len(dictionary))``."""
    mentions = [tuple(m) for m in mentions]
    if not mentions:
        return np.zeros((0, len(dictionary)))
    if strategy in TFIDF_STRATEGIES:
        if tfidf is None:
            raise ValueError(f"{strategy} needs a fitted TF-IDF model")
        tfidf._check(dictionary)
        fn = _tfidf_all_matrix if strategy == "tfidf_all" else _tfidf_max_matrix
        return fn(tfidf, mentions)
    if strategy == "w2v_all":
        if store is None:
            raise ValueError("w2v_all needs an embedding store")
        if any(len(m) == 0 for m in mentions):
            raise ValueError("cannot featurize an empty mention")
        return _w2v_all_matrix(store, dictionary, mentions)
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def tfidf_all(model: TfidfModel, dictionary: ConceptDictionary, mention: Sequence[str]) -> SimilarityFeatureVector:
    return SimilarityFeatureVector("tfidf_all", similarity_matrix("tfidf_all", [mention], dictionary, tfidf=model)[0])


def tfidf_max(model: TfidfModel, dictionary: ConceptDictionary, mention: Sequence[str]) -> SimilarityFeatureVector:
    return SimilarityFeatureVector("tfidf_max", similarity_matrix("tfidf_max", [mention], dictionary, tfidf=model)[0])


def w2v_all(store: EmbeddingStore, dictionary: ConceptDictionary, mention: Sequence[str]) -> SimilarityFeatureVector:
    return SimilarityFeatureVector("w2v_all", similarity_matrix("w2v_all", [mention], dictionary, store=store)[0])


def write_feature_matrix(matrix: np.ndarray, path, strategy: str, mention_ids: Sequence[str], codes: Sequence[str]) -> None:
    """Write ``<path>.json`` (header) and ``<path>.f64`` (row-major little-endian float64).

    The header holds ``rows``, ``cols``, ``strategy``, ``dtype``, ``data`` (the
    binary file name), ``mention_ids`` (row order) and ``codes`` (column order).
    """
    path = Path(path)
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    if matrix.shape != (len(mention_ids), len(codes)):
        raise ValueError("matrix shape does not match mention_ids x codes")
    data = path.with_suffix(".f64")
    data.write_bytes(matrix.tobytes())
    header = {
        "rows": int(matrix.shape[0]),
        "cols": int(matrix.shape[1]),
        "strategy": strategy,
        "dtype": "<f8",
        "data": data.name,
        "mention_ids": list(mention_ids),
        "codes": list(codes),
    }
    path.with_suffix(".json").write_text(json.dumps(header) + "\n", encoding="utf-8")


def read_feature_matrix(path):
    """Return ``(matrix, header)`` for a file pair written by :func:`write_feature_matrix`."""
    path = Path(path).with_suffix(".json")
    header = json.loads(path.read_text(encoding="utf-8"))
    raw = (path.parent / header["data"]).read_bytes()
    matrix = np.frombuffer(raw, dtype=header["dtype"]).reshape(header["rows"], header["cols"])
    return matrix.copy(), header
