import numpy as np
import pytest
import torch

from conceptnorm.embeddings import EmbeddingStore
from conceptnorm.models import (
    CNNEncoder,
    ModelConfig,
    RNNEncoder,
    Split,
    TrainedModel,
    build_model,
    classify,
    derive_max_len,
    encode_tokens,
    predict,
    predict_batch,
    train,
)
from conceptnorm.synthetic import normalization_task

# encoder, hidden units, attention, with features
GRID = [("cnn", 100, False, f) for f in (False, True)] + [
    (enc, h, att, f)
    for enc in ("bilstm", "bigru")
    for h in (100, 200)
    for att in (False, True)
    for f in (False, True)
]


@pytest.fixture(scope="module")
def store():
    rng = np.random.default_rng(0)
    return EmbeddingStore.from_dict({f"w{i}": rng.normal(size=8).tolist() for i in range(12)})


def toy_model(store, **overrides):
    params = dict(encoder="bigru", hidden_units=4, attention=True, max_len=6, feature_maps=5, dense_dim=4)
    params.update(overrides)
    return build_model(ModelConfig(**params), store, ["A", "B", "C"], list(store.vocab))


def ragged_batch(model, rng, n=7):
    lists = [[f"w{rng.integers(12)}" for _ in range(rng.integers(1, 7))] for _ in range(n)]
    return lists, encode_tokens(model.vocab, lists, model.config.max_len)


@pytest.mark.parametrize("encoder, hidden, attention, with_features", GRID)
def test_table_grid_shapes(store, encoder, hidden, attention, with_features):
    model = toy_model(store, encoder=encoder, hidden_units=hidden, attention=attention,
                      feature_maps=100, dense_dim=100,
                      feature_strategy="tfidf_max" if with_features else None)
    ids = ragged_batch(model, np.random.default_rng(1))[1]
    encoding, weights = model.module.encode(ids)
    width = 100 if encoder == "cnn" else 2 * hidden
    assert encoding.shape == (7, width)
    assert model.module.output.weight.shape == (3, width + (3 if with_features else 0))
    feats = np.random.default_rng(2).uniform(size=(7, 3)) if with_features else None
    probs = classify(model, encoding.detach(), feats)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
    assert np.all((probs > 0) & (probs < 1))
    if attention:
        w = weights.detach().numpy()
        mask = (ids != 0).numpy()
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(w >= 0) and np.all(w[~mask] == 0)
    else:
        assert weights is None


def test_cnn_with_attention_rejected():
    with pytest.raises(ValueError):
        ModelConfig(encoder="cnn", attention=True).validate()


@pytest.mark.parametrize("cell", ["bilstm", "bigru"])
def test_single_token_attention_returns_first_state(cell):
    torch.manual_seed(0)
    enc = RNNEncoder(cell, 5, 3, attention=True)
    x = torch.randn(2, 4, 5)
    mask = torch.tensor([[True, False, False, False]] * 2)
    encoding, weights = enc(x, mask)
    assert torch.equal(weights[:, 0], torch.ones(2))
    states, _ = enc.rnn(x[:, :1])
    torch.testing.assert_close(encoding, states[:, 0], rtol=0, atol=1e-7)


def test_rnn_all_masked_is_an_error():
    enc = RNNEncoder("bigru", 5, 3, attention=False)
    with pytest.raises(ValueError):
        enc(torch.zeros(1, 3, 5), torch.zeros(1, 3, dtype=torch.bool))


def test_rnn_ignores_padding_content():
    torch.manual_seed(1)
    enc = RNNEncoder("bilstm", 4, 3, attention=True)
    x = torch.randn(1, 5, 4)
    mask = torch.tensor([[True, True, True, False, False]])
    noisy = x.clone()
    noisy[0, 3:] = 100.0
    torch.testing.assert_close(enc(x, mask)[0], enc(noisy, mask)[0])


def test_cnn_widths_zero_input_and_relu():
    enc = CNNEncoder(8, [3, 4, 5], 100, 100)
    x = torch.randn(4, 6, 8)
    mask = torch.ones(4, 6, dtype=torch.bool)
    mask[0, 2:] = False
    assert enc.pooled(x, mask).shape == (4, 300)
    out, _ = enc(x, mask)
    assert out.shape == (4, 100) and bool((out >= 0).all())
    for conv in enc.convs:
        torch.nn.init.zeros_(conv.bias)
    torch.nn.init.zeros_(enc.dense.bias)
    zero, _ = enc(torch.zeros(2, 6, 8), torch.ones(2, 6, dtype=torch.bool))
    assert torch.equal(zero, torch.zeros(2, 100))


def test_softmax_uniform_shift_and_tie_rule(store):
    model = toy_model(store)
    torch.nn.init.zeros_(model.module.output.weight)
    torch.nn.init.zeros_(model.module.output.bias)
    probs = classify(model, torch.randn(5, 8))
    np.testing.assert_allclose(probs, 1 / 3, atol=1e-12)
    code, p = predict(model, ["w1", "w2"])
    assert code == "A" and np.allclose(p, 1 / 3)
    torch.nn.init.normal_(model.module.output.weight)
    model.module.double()
    enc = torch.randn(5, 8, dtype=torch.float64)
    before = classify(model, enc)
    with torch.no_grad():
        model.module.output.bias += 7.5
    np.testing.assert_allclose(classify(model, enc), before, atol=1e-9)
    # ties in the probability vector go to the lowest label
    with torch.no_grad():
        model.module.output.weight.zero_()
        model.module.output.bias.copy_(torch.tensor([0.0, 2.0, 2.0], dtype=torch.float64))
    labels, _ = predict_batch(model, [["w3"], ["w4", "w5"]])
    assert labels.tolist() == [1, 1]


def test_feature_presence_and_length_checked(store):
    with_feats = toy_model(store, feature_strategy="w2v_all")
    enc = torch.randn(2, 8)
    with pytest.raises(ValueError):
        classify(with_feats, enc)
    with pytest.raises(ValueError):
        classify(with_feats, enc, np.zeros((2, 4)))
    with pytest.raises(ValueError):
        classify(toy_model(store), enc, np.zeros((2, 3)))


def test_feature_scale_multiplies_features(store):
    base = toy_model(store, feature_strategy="tfidf_max")
    scaled = toy_model(store, feature_strategy="tfidf_max", feature_scale=3.0)
    enc = torch.randn(2, 8)
    feats = torch.rand(2, 3, dtype=torch.float64)
    torch.testing.assert_close(scaled.module.logits(enc, feats), base.module.logits(enc, 3.0 * feats))


@pytest.mark.parametrize("encoder, attention", [("bigru", True), ("bilstm", False), ("cnn", False)])
def test_autograd_matches_central_differences(store, encoder, attention):
    cfg = ModelConfig(encoder=encoder, hidden_units=4, attention=attention, feature_strategy="tfidf_all",
                      window_sizes=[2, 3], feature_maps=5, dense_dim=4, max_len=6, seed=4)
    two_class = build_model(cfg, store, ["A", "B"], list(store.vocab))
    module = two_class.module.double()
    ids = encode_tokens(two_class.vocab, [["w1", "w2", "w3", "w4", "w5", "w6"], ["w7", "w8"]], 6)
    feats = torch.tensor([[0.3, 0.9], [0.5, 0.1]], dtype=torch.float64)
    y = torch.tensor([0, 1])

    def loss():
        return torch.nn.functional.cross_entropy(module(ids, feats), y)

    module.zero_grad()
    loss().backward()
    rng = np.random.default_rng(3)
    eps = 1e-5
    for name, param in module.named_parameters():
        if not param.requires_grad:
            continue
        flat = param.data.view(-1)
        grad = param.grad.view(-1)
        for idx in rng.choice(flat.numel(), size=min(5, flat.numel()), replace=False):
            orig = flat[idx].item()
            with torch.no_grad():
                flat[idx] = orig + eps
                up = loss().item()
                flat[idx] = orig - eps
                down = loss().item()
                flat[idx] = orig
            numeric = (up - down) / (2 * eps)
            analytic = grad[idx].item()
            denom = max(abs(numeric), abs(analytic), 1e-8)
            assert abs(numeric - analytic) / denom <= 1e-4 or abs(numeric - analytic) < 1e-9, name


@pytest.fixture(scope="module")
def small_task():
    task = normalization_task(n_mentions=50, n_codes=5, seed=3)
    recs = task.corpus.records
    split = Split([r.tokens for r in recs], [task.corpus.label_of(r.code) for r in recs])
    return task, split


def test_memorization_and_early_loss(small_task):
    task, split = small_task
    cfg = ModelConfig(hidden_units=32, epochs=50, batch_size=16)
    model = train(cfg, split, task.store, task.corpus.codes)
    labels, _ = predict_batch(model, split.tokens)
    assert np.mean(labels == split.labels) >= 0.95
    losses = model.history["loss"]
    assert all(b <= a for a, b in zip(losses[:5], losses[1:5]))
    assert all(np.isfinite(p).all() for p in model.parameters.values())
    # a memorized training record predicts its gold code
    i = int(np.flatnonzero(labels == split.labels)[0])
    assert predict(model, split.tokens[i])[0] == task.corpus.codes[split.labels[i]]


def test_seeded_training_is_bit_identical(small_task):
    task, split = small_task
    cfg = ModelConfig(encoder="bilstm", hidden_units=8, epochs=3, batch_size=8)
    a = train(cfg, split, task.store, task.corpus.codes).parameters
    b = train(cfg, split, task.store, task.corpus.codes).parameters
    assert a.keys() == b.keys()
    for name in a:
        assert np.array_equal(a[name], b[name]), name
    c = train(ModelConfig(encoder="bilstm", hidden_units=8, epochs=3, batch_size=8, seed=99),
              split, task.store, task.corpus.codes).parameters
    assert not np.array_equal(a["output.weight"], c["output.weight"])


def test_training_preconditions(small_task):
    task, split = small_task
    with pytest.raises(ValueError):
        train(ModelConfig(), Split([], []), task.store, task.corpus.codes)
    with pytest.raises(ValueError):
        train(ModelConfig(), Split([("x",)], [9]), task.store, task.corpus.codes)
    with pytest.raises(ValueError):
        train(ModelConfig(feature_strategy="tfidf_max"), split, task.store, task.corpus.codes)


def test_dev_split_early_stopping_records_history(small_task):
    task, split = small_task
    cfg = ModelConfig(hidden_units=8, epochs=4, dev_fraction=0.2, patience=1)
    model = train(cfg, split, task.store, task.corpus.codes)
    assert 1 <= len(model.history["dev_accuracy"]) <= 4
    assert len(model.history["loss"]) == len(model.history["dev_accuracy"])


def test_checkpoint_round_trip(tmp_path, small_task):
    task, split = small_task
    model = train(ModelConfig(encoder="cnn", attention=False, feature_maps=6, dense_dim=5, epochs=2),
                  split, task.store, task.corpus.codes)
    model.save(tmp_path / "m.ckpt")
    back = TrainedModel.load(tmp_path / "m.ckpt")
    assert back.config == model.config and back.codes == model.codes and back.vocab == model.vocab
    for name, value in model.parameters.items():
        assert np.array_equal(back.parameters[name], value)
    np.testing.assert_array_equal(predict_batch(back, split.tokens)[1], predict_batch(model, split.tokens)[1])


def test_max_len_percentile():
    # 80 lengths: the 97.5th percentile interpolates inside the run of ones
    lists = [["a"] * n for n in [1] * 79 + [9]]
    assert derive_max_len(lists) == 1
    assert derive_max_len([["a"] * n for n in range(1, 41)]) == 40
    assert derive_max_len([]) == 1
