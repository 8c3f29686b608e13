"""Medical concept normalization: map free-text mentions to concept codes."""

from .corpus import Corpus, MentionRecord, dedup_key, load_corpus, normalize_text
from .dictionary import ConceptDictionary, build_dictionary
from .embeddings import EmbeddingStore, lookup, phrase_vector
from .folds import FoldPlan, leakage_rate, make_folds, naive_folds
from .simfeatures import (
    SimilarityFeatureVector,
    TfidfModel,
    cosine,
    fit_tfidf,
    similarity_matrix,
    tfidf_all,
    tfidf_max,
    w2v_all,
)

__version__ = "0.1.0"

__all__ = [
    "ConceptDictionary",
    "Corpus",
    "EmbeddingStore",
    "FoldPlan",
    "MentionRecord",
    "SimilarityFeatureVector",
    "TfidfModel",
    "build_dictionary",
    "cosine",
    "dedup_key",
    "fit_tfidf",
    "leakage_rate",
    "load_corpus",
    "lookup",
    "make_folds",
    "naive_folds",
    "normalize_text",
    "phrase_vector",
    "similarity_matrix",
    "tfidf_all",
    "tfidf_max",
    "w2v_all",
]
