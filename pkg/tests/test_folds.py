from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from conceptnorm.corpus import Corpus, dedup_key, make_record
from conceptnorm.folds import FoldPlan, leakage_rate, make_folds, naive_folds
from conceptnorm.synthetic import random_fold_corpus
from oracles import brute_leakage


def toy_corpus(rows):
    """``rows`` is a list of (text, code) pairs."""
    return Corpus([make_record(f"m{i}", text, code) for i, (text, code) in enumerate(rows)])


def test_per_group_near_equal_split():
    corpus = toy_corpus([("a1", "A"), ("a2", "A"), ("a3", "A"), ("a4", "A"), ("b1", "B"), ("b2", "B")])
    plan = make_folds(corpus, 2, seed=0)
    for fold in plan.folds:
        codes = Counter(corpus.get(m).code for m in fold)
        assert codes == {"A": 2, "B": 1}


def test_duplicates_land_once():
    corpus = toy_corpus([("sore arm", "A")] * 5 + [("x", "A"), ("y", "B"), ("z", "B")])
    plan = make_folds(corpus, 2, seed=1)
    ids = plan.mention_ids
    assert ids.count("m0") == 1
    assert not any(f"m{i}" in ids for i in range(1, 5))


def test_fold_sizes_on_thirty_unique_mentions():
    # enumerate: 3 code groups of 10 -> every fold gets 2 per group
    even = toy_corpus([(f"w{i}", "ABC"[i % 3]) for i in range(30)])
    for seed in range(5):
        assert [len(f) for f in make_folds(even, 5, seed).folds] == [6] * 5
    # 4 groups of sizes 7, 8, 9, 6: remainders fill the low folds
    rows = [(f"v{i}", c) for i, c in enumerate("A" * 7 + "B" * 8 + "C" * 9 + "D" * 6)]
    uneven = toy_corpus(rows)
    expected = [sum(n // 5 + (1 if j < n % 5 else 0) for n in (7, 8, 9, 6)) for j in range(5)]
    assert expected == [8, 7, 6, 5, 4]
    for seed in range(5):
        sizes = [len(f) for f in make_folds(uneven, 5, seed).folds]
        assert sizes == expected
        assert max(sizes) - min(sizes) <= 4


def test_small_groups_fill_lowest_folds():
    corpus = toy_corpus([("only", "A"), ("p", "B"), ("q", "B")])
    plan = make_folds(corpus, 5, seed=3)
    assert "m0" in plan.folds[0]
    assert [len(f) for f in plan.folds] == [2, 1, 0, 0, 0]


def test_errors():
    corpus = toy_corpus([("a", "A")])
    with pytest.raises(ValueError):
        make_folds(corpus, 1, 0)
    with pytest.raises(ValueError):
        make_folds(Corpus([]), 2, 0)
    with pytest.raises(ValueError):
        FoldPlan(k=1, folds=[["a"]], seed=0)


def test_record_level_split_leaks_everything_when_every_phrase_spans_folds():
    corpus = toy_corpus([(f"p{i % 10}", "A") for i in range(40)])
    halves = FoldPlan(k=2, folds=[[f"m{i}" for i in range(20)], [f"m{i}" for i in range(20, 40)]], seed=0)
    assert leakage_rate(halves, corpus) == 1.0
    assert leakage_rate(make_folds(corpus, 2, 0), corpus) == 0.0
    # with 20 copies per phrase a shuffled split spreads every phrase over both folds
    heavy = toy_corpus([(f"p{i % 2}", "A") for i in range(40)])
    for seed in range(10):
        assert leakage_rate(naive_folds(heavy, 2, seed), heavy) == 1.0


def test_naive_leakage_on_forty_percent_duplicates_matches_brute_force():
    corpus = random_fold_corpus(500, 20, 0.4, seed=5)
    keys = {r.mention_id: dedup_key(r) for r in corpus.records}
    plan = naive_folds(corpus, 5, seed=5)
    expected = brute_leakage(plan.folds, keys)
    assert leakage_rate(plan, corpus) == pytest.approx(expected, abs=1e-12)
    assert abs(expected - 0.40) <= 0.05


def test_deterministic_and_json_round_trip(tmp_path):
    corpus = random_fold_corpus(120, 6, 0.3, seed=2)
    a, b = make_folds(corpus, 5, 13), make_folds(corpus, 5, 13)
    assert a == b
    assert make_folds(corpus, 5, 14) != a
    a.save(tmp_path / "folds.json")
    assert FoldPlan.load(tmp_path / "folds.json") == a


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(10, 300),
    codes=st.integers(2, 30),
    dup=st.floats(0.0, 0.6),
    k=st.sampled_from([2, 3, 5]),
    seed=st.integers(0, 10_000),
)
def test_grouped_folds_never_leak_and_cover_dedup_set(n, codes, dup, k, seed):
    corpus = random_fold_corpus(n, codes, dup, seed)
    plan = make_folds(corpus, k, seed)
    assert leakage_rate(plan, corpus) == 0.0
    ids = plan.mention_ids
    assert len(ids) == len(set(ids))
    first = {}
    for rec in corpus.records:
        first.setdefault(dedup_key(rec), rec.mention_id)
    assert set(ids) == set(first.values())
    for i in range(k):
        train, test = plan.split(i)
        assert not {dedup_key(corpus.get(m)) for m in train} & {dedup_key(corpus.get(m)) for m in test}
