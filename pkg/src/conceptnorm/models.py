"""Phrase encoders and the softmax concept classifier.

Encoders map a right-padded ``batch x max_len x embedding_dim`` tensor and
its boolean mask to a fixed-width phrase encoding:

* ``bilstm`` / ``bigru``: bidirectional recurrence over the unmasked
  positions.  Without attention the encoding is the concatenated final
  states; with attention it is the additive-attention pooling
  ``sum_t softmax_t(v . tanh(W h_t)) h_t`` of the per-position states.
* ``cnn``: one bank of ``feature_maps`` filters per window size, max-pooled
  over time, concatenated and passed through a ReLU dense layer.

The classifier concatenates the encoding with the optional similarity
feature vector (times ``feature_scale``) and applies one affine map followed
by softmax.  Similarities live in [0, 1] beside a ``2 * hidden_units`` wide
encoding, so with an adaptive optimizer the few feature weights move slowly;
``feature_scale`` widens their range without changing the architecture.
"""

from __future__ import annotations

import copy
import io
import json
import logging
import math
import zipfile
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .embeddings import EmbeddingStore
from .simfeatures import STRATEGIES

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
ENCODERS = ("cnn", "bilstm", "bigru")
PAD_ID = 0
OOV_ID = 1


class TrainingError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    encoder: str = "bigru"
    hidden_units: int = 100
    attention: bool = True
    feature_strategy: Optional[str] = None
    feature_scale: float = 1.0
    window_sizes: List[int] = field(default_factory=lambda: [3, 4, 5])
    feature_maps: int = 100
    dense_dim: int = 100
    num_classes: int = 0
    embedding_dim: int = 0
    max_len: int = 0
    attention_dim: int = 0
    freeze_embeddings: bool = True
    dropout: float = 0.0
    seed: int = 13
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    dev_fraction: float = 0.0
    patience: int = 5

    def validate(self) -> None:
        if self.encoder not in ENCODERS:
            raise ValueError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if self.encoder == "cnn" and self.attention:
            raise ValueError("attention is only defined for recurrent encoders")
        if self.feature_strategy is not None and self.feature_strategy not in STRATEGIES:
            raise ValueError(f"unknown feature strategy {self.feature_strategy!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.hidden_units < 1 or self.feature_maps < 1 or self.dense_dim < 1 or not self.window_sizes:
            raise ValueError("layer sizes must be positive")
        if self.num_classes and self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.max_len < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("max_len, epochs and batch_size must be non-negative")
        if not 0.0 <= self.dev_fraction < 1.0:
            raise ValueError("dev_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.window_sizes = list(cfg.window_sizes)
        return cfg

    @property
    def encoding_width(self) -> int:
        if self.encoder == "cnn":
            return self.dense_dim
        return 2 * self.hidden_units


class RNNEncoder(nn.Module):
    def __init__(self, cell: str, input_dim: int, hidden_units: int, attention: bool, attention_dim: int = 0):
        super().__init__()
        rnn_cls = {"bilstm": nn.LSTM, "bigru": nn.GRU}[cell]
        self.rnn = rnn_cls(input_dim, hidden_units, batch_first=True, bidirectional=True)
        self.hidden_units = hidden_units
        self.attention = attention
        if attention:
            attention_dim = attention_dim or 2 * hidden_units
            self.attn_proj = nn.Linear(2 * hidden_units, attention_dim, bias=False)
            self.attn_score = nn.Linear(attention_dim, 1, bias=False)

    @property
    def width(self) -> int:
        return 2 * self.hidden_units

    def forward(self, embedded: torch.Tensor, mask: torch.Tensor) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        """Return ``(encoding, attention_weights)``; weights are ``None`` without attention."""
        lengths = mask.sum(dim=1)
        if bool((lengths == 0).any()):
            raise ValueError("every phrase needs at least one unmasked position")
        packed = pack_padded_sequence(embedded, lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, h_n = self.rnn(packed)
        if isinstance(h_n, tuple):
            h_n = h_n[0]
        if not self.attention:
            return torch.cat([h_n[0], h_n[1]], dim=1), None
        states, _ = pad_packed_sequence(out, batch_first=True, total_length=embedded.shape[1])
        scores = self.attn_score(torch.tanh(self.attn_proj(states))).squeeze(-1)
        weights = torch.softmax(scores.masked_fill(~mask, float("-inf")), dim=1)
        return torch.bmm(weights.unsqueeze(1), states).squeeze(1), weights


class CNNEncoder(nn.Module):
    def __init__(self, input_dim: int, window_sizes: Sequence[int], feature_maps: int, dense_dim: int):
        super().__init__()
        self.window_sizes = list(window_sizes)
        self.convs = nn.ModuleList(nn.Conv1d(input_dim, feature_maps, h) for h in self.window_sizes)
        self.dense = nn.Linear(feature_maps * len(self.window_sizes), dense_dim)

    @property
    def width(self) -> int:
        return self.dense.out_features

    def pooled(self, embedded: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        lengths = mask.sum(dim=1)
        if bool((lengths == 0).any()):
            raise ValueError("every phrase needs at least one unmasked position")
        x = embedded.transpose(1, 2)
        longest = max(self.window_sizes)
        if x.shape[2] < longest:
            x = F.pad(x, (0, longest - x.shape[2]))
        pools = []
        for h, conv in zip(self.window_sizes, self.convs):
            fmap = conv(x)
            starts = torch.arange(fmap.shape[2]).unsqueeze(0)
            # windows starting inside the phrase; the first window always counts
            valid = starts < torch.clamp(lengths - h + 1, min=1).unsqueeze(1)
            pools.append(fmap.masked_fill(~valid.unsqueeze(1), float("-inf")).max(dim=2).values)
        return torch.cat(pools, dim=1)

    def forward(self, embedded: torch.Tensor, mask: torch.Tensor) -> Tuple[torch.Tensor, None]:
        return torch.relu(self.dense(self.pooled(embedded, mask))), None


class NormalizationModel(nn.Module):
    """Frozen (or tunable) embedding lookup, phrase encoder and output layer."""

    def __init__(self, config: ModelConfig, embedding_matrix: np.ndarray):
        super().__init__()
        self.config = config
        weights = torch.as_tensor(np.asarray(embedding_matrix), dtype=torch.float32)
        self.embedding = nn.Embedding.from_pretrained(weights, freeze=config.freeze_embeddings, padding_idx=PAD_ID)
        dim = weights.shape[1]
        if config.encoder == "cnn":
            self.encoder = CNNEncoder(dim, config.window_sizes, config.feature_maps, config.dense_dim)
        else:
            self.encoder = RNNEncoder(config.encoder, dim, config.hidden_units, config.attention, config.attention_dim)
        self.num_features = config.num_classes if config.feature_strategy else 0
        self.dropout = nn.Dropout(config.dropout)
        self.output = nn.Linear(self.encoder.width + self.num_features, config.num_classes)

    def encode(self, token_ids: torch.Tensor) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        mask = token_ids != PAD_ID
        return self.encoder(self.embedding(token_ids), mask)

    def logits(self, encoding: torch.Tensor, features: Optional[torch.Tensor] = None) -> torch.Tensor:
        # dropout regularizes the encoder path only; similarity features pass through untouched
        encoding = self.dropout(encoding)
        if self.num_features:
            if features is None:
                raise ValueError(f"model expects {self.config.feature_strategy} features")
            if features.shape[-1] != self.num_features:
                raise ValueError(f"expected {self.num_features} features, got {features.shape[-1]}")
            encoding = torch.cat([encoding, self.config.feature_scale * features.to(encoding.dtype)], dim=-1)
        elif features is not None:
            raise ValueError("model was configured without similarity features")
        return self.output(encoding)

    def forward(self, token_ids: torch.Tensor, features: Optional[torch.Tensor] = None) -> torch.Tensor:
        encoding, _ = self.encode(token_ids)
        return self.logits(encoding, features)


@dataclass
class TrainedModel:
    config: ModelConfig
    module: NormalizationModel
    codes: List[str]
    vocab: Dict[str, int]
    history: Dict[str, list] = field(default_factory=dict)

    @property
    def parameters(self) -> Dict[str, np.ndarray]:
        return {name: t.detach().cpu().numpy().copy() for name, t in self.module.state_dict().items()}

    def save(self, path: PathLike) -> None:
        params = io.BytesIO()
        np.savez(params, **self.parameters)
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
            zf.writestr("config.json", json.dumps(self.config.to_dict(), indent=1, sort_keys=True))
            zf.writestr("labels.json", json.dumps(self.codes))
            zf.writestr("vocab.json", json.dumps(list(self.vocab)))
            zf.writestr("history.json", json.dumps(self.history))
            zf.writestr("parameters.npz", params.getvalue())

    @classmethod
    def load(cls, path: PathLike) -> "TrainedModel":
        with zipfile.ZipFile(path) as zf:
            config = ModelConfig.from_dict(json.loads(zf.read("config.json")))
            codes = json.loads(zf.read("labels.json"))
            tokens = json.loads(zf.read("vocab.json"))
            history = json.loads(zf.read("history.json")) if "history.json" in zf.namelist() else {}
            with np.load(io.BytesIO(zf.read("parameters.npz"))) as npz:
                params = {k: npz[k] for k in npz.files}
        module = NormalizationModel(config, params["embedding.weight"])
        module.load_state_dict({k: torch.as_tensor(v) for k, v in params.items()})
        module.eval()
        return cls(config, module, codes, {tok: i for i, tok in enumerate(tokens)}, history)


def build_vocab(store: EmbeddingStore, tokens: Sequence[str]) -> Tuple[Dict[str, int], np.ndarray]:
    """Model vocabulary over ``tokens`` that have pretrained vectors.

    Id 0 is padding and id 1 the shared out-of-vocabulary row; both are zero.
    """
    vocab = {"<pad>": PAD_ID, "<unk>": OOV_ID}
    for tok in sorted(set(tokens)):
        if tok in store.vocab and tok not in vocab:
            vocab[tok] = len(vocab)
    matrix = np.zeros((len(vocab), store.dim), dtype=np.float32)
    for tok, idx in vocab.items():
        if idx > OOV_ID:
            matrix[idx] = store.matrix[store.vocab[tok]]
    return vocab, matrix


def derive_max_len(token_lists: Sequence[Sequence[str]], percentile: float = 97.5) -> int:
    lengths = [len(t) for t in token_lists]
    if not lengths:
        return 1
    return max(1, int(math.ceil(np.percentile(lengths, percentile))))


def encode_tokens(vocab: Dict[str, int], token_lists: Sequence[Sequence[str]], max_len: int) -> torch.Tensor:
    ids = torch.full((len(token_lists), max_len), PAD_ID, dtype=torch.long)
    for row, toks in enumerate(token_lists):
        if not toks:
            raise ValueError("cannot encode an empty phrase")
        for col, tok in enumerate(toks[:max_len]):
            ids[row, col] = vocab.get(tok, OOV_ID)
    return ids


@contextmanager
def _deterministic(seed: int):
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        try:
            yield
        finally:
            torch.set_num_threads(threads)


def build_model(config: ModelConfig, store: EmbeddingStore, codes: Sequence[str], tokens: Sequence[str]) -> TrainedModel:
    """Initialise an untrained model; ``config.num_classes`` and ``embedding_dim`` are filled in."""
    config = copy.deepcopy(config)
    config.num_classes = len(codes)
    config.embedding_dim = store.dim
    config.validate()
    if config.max_len < 1:
        raise ValueError("max_len must be set before building a model")
    if config.num_classes < 2:
        raise ValueError("need at least two concept codes")
    vocab, matrix = build_vocab(store, tokens)
    with _deterministic(config.seed):
        module = NormalizationModel(config, matrix)
    module.eval()
    return TrainedModel(config, module, list(codes), vocab)


@dataclass
class Split:
    """Token lists, dense labels and optional feature rows for one data split."""

    tokens: List[Tuple[str, ...]]
    labels: np.ndarray
    features: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.tokens = [tuple(t) for t in self.tokens]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.tokens) != len(self.labels):
            raise ValueError("tokens and labels differ in length")
        if self.features is not None and len(self.features) != len(self.tokens):
            raise ValueError("features and tokens differ in length")

    def __len__(self) -> int:
        return len(self.tokens)

    def subset(self, idx: Sequence[int]) -> "Split":
        idx = list(idx)
        feats = None if self.features is None else self.features[idx]
        return Split([self.tokens[i] for i in idx], self.labels[idx], feats)


def _feature_tensor(features: Optional[np.ndarray]) -> Optional[torch.Tensor]:
    return None if features is None else torch.as_tensor(np.asarray(features), dtype=torch.float32)


def train(
    config: ModelConfig,
    train_split: Split,
    store: EmbeddingStore,
    codes: Sequence[str],
    dev: Optional[Split] = None,
    extra_tokens: Sequence[str] = (),
) -> TrainedModel:
    """Fit a classifier with cross-entropy and Adam (or SGD).

    When ``dev`` is not given and ``config.dev_fraction > 0``, a seeded
    random slice of the training split is held out for early stopping; the
    parameters with the best dev accuracy are restored.  ``extra_tokens``
    widen the embedding vocabulary (e.g. test-split tokens, whose pretrained
    vectors are still usable at inference).
    """
    if len(train_split) == 0:
        raise ValueError("training split is empty")
    if train_split.labels.min() < 0 or train_split.labels.max() >= len(codes):
        raise ValueError("labels must lie in [0, num_classes)")
    if (config.feature_strategy is None) != (train_split.features is None):
        raise ValueError("features must be supplied exactly when feature_strategy is set")

    if dev is None and config.dev_fraction > 0 and len(train_split) >= 20:
        order = np.random.default_rng(config.seed).permutation(len(train_split))
        n_dev = max(1, int(round(config.dev_fraction * len(train_split))))
        dev = train_split.subset(sorted(order[:n_dev]))
        train_split = train_split.subset(sorted(order[n_dev:]))

    config = copy.deepcopy(config)
    if not config.max_len:
        config.max_len = derive_max_len(train_split.tokens)
    vocab_tokens = [t for toks in train_split.tokens for t in toks] + list(extra_tokens)
    if dev is not None:
        vocab_tokens += [t for toks in dev.tokens for t in toks]
    model = build_model(config, store, codes, vocab_tokens)
    config, module = model.config, model.module

    x = encode_tokens(model.vocab, train_split.tokens, config.max_len)
    y = torch.as_tensor(train_split.labels)
    feats = _feature_tensor(train_split.features)
    history: Dict[str, list] = {"loss": [], "dev_accuracy": []}
    best_state, best_acc, stale = None, -1.0, 0

    with _deterministic(config.seed):
        params = [p for p in module.parameters() if p.requires_grad]
        if config.optimizer == "adam":
            opt = torch.optim.Adam(params, lr=config.learning_rate)
        else:
            opt = torch.optim.SGD(params, lr=config.learning_rate)
        gen = torch.Generator().manual_seed(config.seed)
        for epoch in range(config.epochs):
            module.train()
            perm = torch.randperm(len(y), generator=gen)
            total = 0.0
            for start in range(0, len(y), config.batch_size):
                idx = perm[start:start + config.batch_size]
                logits = module(x[idx], None if feats is None else feats[idx])
                loss = F.cross_entropy(logits, y[idx])
                if not torch.isfinite(loss):
                    raise TrainingError(f"non-finite loss {loss.item()} at epoch {epoch}, batch starting {start}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
            history["loss"].append(total / len(y))
            module.eval()
            if dev is not None:
                labels, _ = predict_batch(model, dev.tokens, dev.features)
                acc = float(np.mean(labels == dev.labels))
                history["dev_accuracy"].append(acc)
                if acc > best_acc:
                    best_acc, stale = acc, 0
                    best_state = copy.deepcopy(module.state_dict())
                else:
                    stale += 1
                    if stale >= config.patience:
                        break
    if best_state is not None:
        module.load_state_dict(best_state)
    module.eval()
    model.history = history
    logger.debug("trained %s for %d epochs, final loss %.4f", config.encoder, len(history["loss"]),
                 history["loss"][-1] if history["loss"] else float("nan"))
    return model


def classify(model: TrainedModel, encoding: torch.Tensor, features: Optional[np.ndarray] = None) -> np.ndarray:
    """Softmax probabilities over codes for an encoding (1-d or batched)."""
    with torch.no_grad():
        logits = model.module.logits(encoding, _feature_tensor(features))
        return torch.softmax(logits.double(), dim=-1).numpy()


def predict_batch(
    model: TrainedModel, token_lists: Sequence[Sequence[str]], features: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(labels, probabilities)``; argmax ties go to the lowest label."""
    if len(token_lists) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, len(model.codes)))
    module = model.module
    was_training = module.training
    module.eval()
    ids = encode_tokens(model.vocab, token_lists, model.config.max_len)
    with torch.no_grad():
        encoding, _ = module.encode(ids)
    probs = classify(model, encoding, features)
    module.train(was_training)
    return np.argmax(probs, axis=1), probs


def predict(model: TrainedModel, tokens: Sequence[str], features: Optional[np.ndarray] = None) -> Tuple[str, np.ndarray]:
    feats = None if features is None else np.asarray(features)[None, :]
    labels, probs = predict_batch(model, [tokens], feats)
    return model.codes[int(labels[0])], probs[0]
