"""Pretrained word vectors in the plain-text word2vec format."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Collection, Dict, Iterable, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class EmbeddingFormatError(ValueError):
    pass


@dataclass
class EmbeddingStore:
    """Token vectors with a zero vector for anything out of vocabulary."""

    vocab: Dict[str, int]
    matrix: np.ndarray
    oov_vector: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.vocab):
            raise EmbeddingFormatError("matrix must be vocab-size x dim")
        if not np.all(np.isfinite(self.matrix)):
            raise EmbeddingFormatError("embedding matrix contains non-finite values")
        self.oov_vector = np.zeros(self.dim)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def __contains__(self, token: str) -> bool:
        return token in self.vocab

    def __len__(self) -> int:
        return len(self.vocab)

    @classmethod
    def from_dict(cls, vectors: Dict[str, Sequence[float]]) -> "EmbeddingStore":
        vocab = {tok: i for i, tok in enumerate(vectors)}
        matrix = np.array([vectors[t] for t in vocab], dtype=np.float64)
        return cls(vocab, matrix.reshape(len(vocab), -1))

    @classmethod
    def load(cls, path: PathLike, restrict: Optional[Collection[str]] = None) -> "EmbeddingStore":
        return load_word2vec_text(path, restrict=restrict)


def lookup(store: EmbeddingStore, token: str) -> np.ndarray:
    idx = store.vocab.get(token)
    if idx is None:
        return store.oov_vector.copy()
    return store.matrix[idx].copy()


def phrase_vector(store: EmbeddingStore, tokens: Sequence[str]) -> np.ndarray:
    """Mean of the token vectors; OOV tokens add zeros but still count."""
    if len(tokens) == 0:
        raise ValueError("cannot embed an empty phrase")
    total = np.zeros(store.dim)
    for tok in tokens:
        idx = store.vocab.get(tok)
        if idx is not None:
            total += store.matrix[idx]
    return total / len(tokens)


def load_word2vec_text(path: PathLike, restrict: Optional[Collection[str]] = None) -> EmbeddingStore:
    """Read ``count dim`` header then ``token v1 .. vdim`` lines.

    A missing header is tolerated (dimension taken from the first row).
    With ``restrict``, only those tokens are kept; earlier rows win on
    duplicate tokens.
    """
    path = Path(path)
    vocab: Dict[str, int] = {}
    rows = []
    dim = None
    with path.open(encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                dim = int(parts[1])
                continue
            if len(parts) < 2:
                if line.strip():
                    raise EmbeddingFormatError(f"{path}:{lineno}: malformed vector row")
                continue
            if dim is None:
                dim = len(parts) - 1
            if len(parts) != dim + 1:
                raise EmbeddingFormatError(f"{path}:{lineno}: expected {dim} components, got {len(parts) - 1}")
            token = parts[0]
            if token in vocab or (restrict is not None and token not in restrict):
                continue
            try:
                rows.append([float(x) for x in parts[1:]])
            except ValueError as exc:
                raise EmbeddingFormatError(f"{path}:{lineno}: {exc}") from None
            vocab[token] = len(vocab)
    if dim is None:
        raise EmbeddingFormatError(f"{path}: no vectors found")
    matrix = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    logger.info("loaded %d vectors of dim %d from %s", len(vocab), dim, path)
    return EmbeddingStore(vocab, matrix)


def save_word2vec_text(store: EmbeddingStore, path: PathLike) -> None:
    # repr() of a float64 round-trips exactly
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"{len(store.vocab)} {store.dim}\n")
        for tok, idx in store.vocab.items():
            fh.write(tok + " " + " ".join(repr(float(x)) for x in store.matrix[idx]) + "\n")


def corpus_vocabulary(token_lists: Iterable[Sequence[str]]) -> set:
    return {tok for toks in token_lists for tok in toks}
