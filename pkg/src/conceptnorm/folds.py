"""Leakage-free k-fold construction (per-code grouped splitting).

Mentions are deduplicated on ``(tokens, code)``, grouped by code, and each
group is shuffled and dealt into ``k`` near-equal parts independently.  Part
``j`` of every group goes into fold ``j``.  Since duplicates are gone before
splitting, no exact phrase+code pair is shared between a train and a test
split.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple, Union

from .corpus import Corpus, dedup_key

PathLike = Union[str, Path]


@dataclass
class FoldPlan:
    k: int
    folds: List[List[str]]
    seed: int

    def __post_init__(self) -> None:
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if len(self.folds) != self.k:
            raise ValueError(f"expected {self.k} folds, got {len(self.folds)}")
        seen = set()
        for fold in self.folds:
            for mid in fold:
                if mid in seen:
                    raise ValueError(f"mention {mid!r} appears in more than one fold")
                seen.add(mid)

    def split(self, i: int) -> Tuple[List[str], List[str]]:
        """Return ``(train_ids, test_ids)`` with fold ``i`` held out."""
        if not 0 <= i < self.k:
            raise IndexError(f"fold id {i} out of range for k={self.k}")
        train = [mid for j, fold in enumerate(self.folds) if j != i for mid in fold]
        return train, list(self.folds[i])

    @property
    def mention_ids(self) -> List[str]:
        return [mid for fold in self.folds for mid in fold]

    def to_dict(self) -> dict:
        return {"k": self.k, "seed": self.seed, "folds": [list(f) for f in self.folds]}

    @classmethod
    def from_dict(cls, data: dict) -> "FoldPlan":
        return cls(k=int(data["k"]), folds=[list(f) for f in data["folds"]], seed=int(data.get("seed", 0)))

    def save(self, path: PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: PathLike) -> "FoldPlan":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _chunk_sizes(n: int, k: int) -> List[int]:
    # the first n % k parts get the extra member, so tiny groups fill low folds
    base, extra = divmod(n, k)
    return [base + (1 if j < extra else 0) for j in range(k)]


def make_folds(corpus: Corpus, k: int, seed: int) -> FoldPlan:
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    seen = set()
    groups: Dict[str, List[str]] = {}
    for rec in corpus.records:
        key = dedup_key(rec)
        if key in seen:
            continue
        seen.add(key)
        groups.setdefault(rec.code, []).append(rec.mention_id)
    if not seen:
        raise ValueError("corpus is empty")

    rng = random.Random(seed)
    folds: List[List[str]] = [[] for _ in range(k)]
    for code in corpus.codes:
        members = list(groups.get(code, []))
        rng.shuffle(members)
        start = 0
        for j, size in enumerate(_chunk_sizes(len(members), k)):
            folds[j].extend(members[start:start + size])
            start += size
    return FoldPlan(k=k, folds=folds, seed=seed)


def naive_folds(corpus: Corpus, k: int, seed: int) -> FoldPlan:
    """Record-level shuffled k-fold split with no deduplication or grouping.

    This is the baseline whose train/test overlap :func:`leakage_rate`
    exposes.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    ids = [rec.mention_id for rec in corpus.records]
    random.Random(seed).shuffle(ids)
    folds: List[List[str]] = []
    start = 0
    for size in _chunk_sizes(len(ids), k):
        folds.append(ids[start:start + size])
        start += size
    return FoldPlan(k=k, folds=folds, seed=seed)


def leakage_rate(plan: FoldPlan, corpus: Corpus) -> float:
    """Mean over splits of the fraction of test records whose key is also in train.

    Splits with an empty test fold are left out of the mean.
    """
    keys = [[dedup_key(corpus.get(mid)) for mid in fold] for fold in plan.folds]
    rates = []
    for i in range(plan.k):
        if not keys[i]:
            continue
        train_keys = {key for j, fold_keys in enumerate(keys) if j != i for key in fold_keys}
        rates.append(sum(key in train_keys for key in keys[i]) / len(keys[i]))
    return sum(rates) / len(rates) if rates else 0.0
