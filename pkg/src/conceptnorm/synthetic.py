"""Seeded synthetic corpora, dictionaries and embeddings.

Two generators live here:

* :func:`random_fold_corpus` draws corpora with a controlled share of
  duplicated ``(phrase, code)`` pairs, for fold-leakage checks.
* :func:`normalization_task` builds a toy concept normalization problem:
  each code owns a small word pool, dictionary synonyms are drawn from the
  pool, and mentions are corrupted synonyms (lay-word substitution, typos,
  filler insertion, word drops).  Word vectors cluster by code with noise,
  standing in for distributional embeddings.
"""

from __future__ import annotations

import random
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .corpus import Corpus, MentionRecord, write_corpus_tsv
from .dictionary import ConceptDictionary
from .embeddings import EmbeddingStore, save_word2vec_text

_CONSONANTS = "bcdfghklmnprstvz"
_VOWELS = "aeiou"


def _pseudo_word(rng: random.Random, used: set, syllables: Tuple[int, int] = (2, 3)) -> str:
    while True:
        n = rng.randint(*syllables)
        word = "".join(rng.choice(_CONSONANTS) + rng.choice(_VOWELS) for _ in range(n))
        if word not in used:
            used.add(word)
            return word


def random_fold_corpus(n_mentions: int, n_codes: int, duplicate_rate: float, seed: int,
                       multiplicity: Tuple[int, int] = (4, 8)) -> Corpus:
    """Corpus where about ``duplicate_rate`` of records share their key with another record.

    Duplicated keys are repeated ``multiplicity`` times so that a record-level
    shuffle almost always puts a copy on the training side.
    """
    rng = random.Random(seed)
    used: set = set()
    codes = [f"C{i:03d}" for i in range(n_codes)]
    n_dup_records = int(round(duplicate_rate * n_mentions))
    phrases: List[Tuple[str, str]] = []
    while len(phrases) < n_dup_records:
        remaining = n_dup_records - len(phrases)
        m = remaining if remaining < 2 * multiplicity[0] else rng.randint(*multiplicity)
        if m == 1 and phrases:
            key = phrases[-1]
        else:
            key = (" ".join(_pseudo_word(rng, used) for _ in range(rng.randint(1, 3))), rng.choice(codes))
        phrases.extend([key] * m)
    while len(phrases) < n_mentions:
        phrases.append((" ".join(_pseudo_word(rng, used) for _ in range(rng.randint(1, 4))), rng.choice(codes)))
    rng.shuffle(phrases)
    records = [
        MentionRecord(f"m{i:05d}", text, tuple(text.split()), code, f"d{i // 5:04d}")
        for i, (text, code) in enumerate(phrases)
    ]
    return Corpus(records)


@dataclass
class SyntheticTask:
    corpus: Corpus
    dictionary: ConceptDictionary
    store: EmbeddingStore
    dictionary_rows: List[Tuple[str, str]]

    def write(self, directory: Path) -> Dict[str, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {
            "corpus": directory / "corpus.tsv",
            "dictionary": directory / "dictionary.tsv",
            "embeddings": directory / "vectors.txt",
        }
        write_corpus_tsv(self.corpus.records, paths["corpus"])
        with paths["dictionary"].open("w", encoding="utf-8") as fh:
            fh.write("code\tterm\n")
            for code, term in self.dictionary_rows:
                fh.write(f"{code}\t{term}\n")
        save_word2vec_text(self.store, paths["embeddings"])
        return paths


def _typo(rng: random.Random, word: str) -> str:
    chars = list(word)
    i = rng.randrange(len(chars))
    op = rng.choice(("swap", "drop", "sub"))
    if op == "swap" and len(chars) > 1:
        j = min(i + 1, len(chars) - 1) if i < len(chars) - 1 else i - 1
        chars[i], chars[j] = chars[j], chars[i]
    elif op == "drop" and len(chars) > 3:
        del chars[i]
    else:
        chars[i] = rng.choice(string.ascii_lowercase)
    return "".join(chars)


def normalization_task(
    n_mentions: int = 300,
    n_codes: int = 10,
    seed: int = 7,
    dim: int = 32,
    dictionary_words: int = 10,
    lay_words: int = 4,
    shared_words: int = 3,
    synonyms_per_code: int = 6,
    embedding_noise: float = 3.0,
    p_lay: float = 0.1,
    p_typo: float = 0.1,
    p_drop: float = 0.15,
    max_fillers: int = 2,
    zipf: float = 1.0,
    min_per_code: int = 5,
) -> SyntheticTask:
    """Build a seeded toy normalization task.

    Codes come in pairs that share ``shared_words`` words (think "toe pain"
    vs "toe swelling"), so a single word rarely identifies the code.
    Dictionary synonyms use only the code's dictionary words; mentions may
    swap those for lay words that exist in the embedding table but never in
    the dictionary.  With ``zipf > 0`` code frequencies follow
    ``rank ** -zipf`` (each code keeps at least ``min_per_code`` mentions),
    giving the long tail of rare codes where dictionary features matter most.
    """
    rng = random.Random(seed)
    nrng = np.random.default_rng(seed)
    used: set = set()
    codes = [f"{100000 + 7919 * i}" for i in range(n_codes)]

    shared = [[_pseudo_word(rng, used) for _ in range(shared_words)] for _ in range((n_codes + 1) // 2)]
    dict_pool = {c: [_pseudo_word(rng, used) for _ in range(dictionary_words)] for c in codes}
    lay_pool = {c: [_pseudo_word(rng, used) for _ in range(lay_words)] for c in codes}
    fillers = [_pseudo_word(rng, used, (1, 2)) for _ in range(12)]

    vectors: Dict[str, np.ndarray] = {}
    for pair, words in enumerate(shared):
        centre = nrng.normal(size=dim)
        for w in words:
            vectors[w] = centre + embedding_noise * nrng.normal(size=dim)
    for c in codes:
        centre = nrng.normal(size=dim)
        for w in dict_pool[c] + lay_pool[c]:
            vectors[w] = centre + embedding_noise * nrng.normal(size=dim)
    for w in fillers:
        vectors[w] = nrng.normal(size=dim)

    dictionary_rows: List[Tuple[str, str]] = []
    synonyms = []
    for i, c in enumerate(codes):
        terms = []
        for _ in range(synonyms_per_code):
            words = rng.sample(dict_pool[c], rng.randint(1, 2)) + [rng.choice(shared[i // 2])]
            rng.shuffle(words)
            term = tuple(words)
            if term not in terms:
                terms.append(term)
        synonyms.append(terms)
        dictionary_rows.extend((c, " ".join(t)) for t in terms)

    weights = np.arange(1, n_codes + 1, dtype=np.float64) ** -zipf
    spare = n_mentions - min_per_code * n_codes
    if spare < 0:
        raise ValueError("n_mentions too small for min_per_code")
    counts = min_per_code + np.floor(spare * weights / weights.sum()).astype(int)
    counts[: n_mentions - counts.sum()] += 1
    labels = [label for label, n in enumerate(counts) for _ in range(n)]

    records: List[MentionRecord] = []
    for i, label in enumerate(labels):
        c = codes[label]
        words = list(rng.choice(synonyms[label]))
        out = []
        for w in words:
            if rng.random() < p_drop and len(words) > 1:
                continue
            if w in dict_pool[c] and rng.random() < p_lay:
                w = rng.choice(lay_pool[c])
            if rng.random() < p_typo:
                w = _typo(rng, w)
            out.append(w)
        if not out:
            out = [words[0]]
        for _ in range(rng.randint(0, max_fillers)):
            out.insert(rng.randint(0, len(out)), rng.choice(fillers))
        text = " ".join(out)
        records.append(MentionRecord(f"s{i:04d}", text, tuple(out), c, f"r{i // 3:04d}"))
    rng.shuffle(records)

    corpus = Corpus(records)
    order = {c: k for k, c in enumerate(codes)}
    dictionary = ConceptDictionary(list(corpus.codes), [synonyms[order[c]] for c in corpus.codes])
    store = EmbeddingStore.from_dict({w: v.tolist() for w, v in vectors.items()})
    return SyntheticTask(corpus, dictionary, store, dictionary_rows)
