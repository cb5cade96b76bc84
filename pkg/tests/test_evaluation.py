import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import explicit_dataset
from multigccf.evaluation import (
    RankingResult,
    evaluate_embeddings,
    export_embeddings,
    ndcg_at_k,
    rank_items,
    recall_at_k,
)


def _result(ranked, relevant):
    return RankingResult(0, np.asarray(ranked), frozenset(relevant))


# -- ranking ---------------------------------------------------------------------------


def test_rank_by_score():
    assert rank_items([0.9, 0.1, 0.5], k=2).ranked_items.tolist() == [0, 2]


def test_masked_top_item_promotes_next():
    assert rank_items([0.9, 0.1, 0.5], mask=[0], k=2).ranked_items.tolist() == [2, 1]


def test_ties_break_by_index():
    assert rank_items(np.zeros(6), k=6).ranked_items.tolist() == [0, 1, 2, 3, 4, 5]
    assert rank_items([1.0, 2.0, 2.0, 1.0], k=4).ranked_items.tolist() == [1, 2, 0, 3]


def test_ranked_length_is_min_k_eligible():
    assert len(rank_items(np.arange(5.0), mask=[1, 2, 3], k=10).ranked_items) == 2


# -- metrics -------------------------------------------------------------------------------


def test_recall_examples():
    assert recall_at_k(_result([0, 2], {0, 1}), 2) == 0.5
    assert recall_at_k(_result([3, 1, 0], {0, 1}), 3) == 1.0


def test_ndcg_examples():
    assert ndcg_at_k(_result([4, 1, 2], {4}), 1) == 1.0
    val = ndcg_at_k(_result([0, 7], {7}), 2)
    assert abs(val - math.log(2) / math.log(3)) < 1e-12
    assert abs(val - 0.6309) < 1e-4
    assert ndcg_at_k(_result([0, 1], {5}), 2) == 0.0


def _ref_recall(ranked, rel, k):
    return len(set(ranked[:k]) & rel) / len(rel)


def _ref_ndcg(ranked, rel, k):
    dcg = 0.0
    for pos, item in enumerate(ranked[:k], start=1):
        if item in rel:
            dcg += (2**1 - 1) / math.log2(pos + 1)
    ideal = sum((2**1 - 1) / math.log2(pos + 1) for pos in range(1, min(k, len(rel)) + 1))
    return dcg / ideal


def test_brute_force_oracle_thousand_cases():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        ranked = rng.permutation(n)[: int(rng.integers(0, n + 1))].tolist()
        rel = set(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False).tolist())
        k = int(rng.integers(1, 30))
        res = _result(ranked, rel)
        assert recall_at_k(res, k) == _ref_recall(ranked, rel, k)
        assert ndcg_at_k(res, k) == _ref_ndcg(ranked, rel, k)


@settings(max_examples=200, deadline=None)
@given(st.permutations(list(range(12))), st.sets(st.integers(0, 11), min_size=1), st.integers(1, 12))
def test_metric_bounds_and_monotone(perm, rel, k):
    res = _result(perm, rel)
    r, n = recall_at_k(res, k), ndcg_at_k(res, k)
    assert 0.0 <= r <= 1.0 and 0.0 <= n <= 1.0 + 1e-12
    if k < 12:
        assert recall_at_k(res, k + 1) >= r
    ideal = all(i in rel for i in perm[: min(k, len(rel))])
    assert (abs(n - 1.0) < 1e-12) == ideal


def test_invalid_k():
    with pytest.raises(ValueError):
        recall_at_k(_result([0], {0}), 0)
    with pytest.raises(ValueError):
        ndcg_at_k(_result([0], {0}), 0)


# -- end-to-end evaluation -----------------------------------------------------------------


def _random_split_dataset(seed, num_users=30, num_items=60):
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for u in range(num_users):
        items = rng.choice(num_items, size=12, replace=False)
        train += [(u, int(i)) for i in items[:8]]
        val += [(u, int(i)) for i in items[8:10]]
        if u % 7:
            test += [(u, int(i)) for i in items[10:]]
    return explicit_dataset(num_users, num_items, train, val, test)


def test_masking_soundness_full_scan():
    ds = _random_split_dataset(1)
    rng = np.random.default_rng(2)
    scores = rng.normal(size=(ds.num_users, ds.num_items))
    known = {(u, i) for u, i in np.concatenate([ds.train, ds.validation]).tolist()}
    test = {(u, i) for u, i in ds.test.tolist()}
    for u in range(ds.num_users):
        mask = [i for (uu, i) in known if uu == u]
        res = rank_items(scores[u], mask, 20, u, [i for (uu, i) in test if uu == u])
        assert not any((u, int(i)) in known for i in res.ranked_items)


def test_skipped_users_counted_and_threads_agree():
    ds = _random_split_dataset(3)
    rng = np.random.default_rng(4)
    ue, ie = rng.normal(size=(ds.num_users, 5)), rng.normal(size=(ds.num_items, 5))
    a = evaluate_embeddings(ue, ie, ds, (5, 20), chunk=4)
    b = evaluate_embeddings(ue, ie, ds, (5, 20), chunk=4, threads=4)
    assert a.num_skipped == len(range(0, ds.num_users, 7))
    assert a.num_users + a.num_skipped == ds.num_users
    assert a.recall == b.recall and a.ndcg == b.ndcg
    assert a.recall[20] >= a.recall[5]


def test_perfect_oracle_model():
    ds = _random_split_dataset(5)
    # score 1 for test items, 0 elsewhere: one-hot user and item embeddings
    ue = np.zeros((ds.num_users, ds.num_items))
    ue[ds.test[:, 0], ds.test[:, 1]] = 1.0
    rep = evaluate_embeddings(ue, np.eye(ds.num_items), ds, (2,), keep_per_user=True)
    assert rep.recall[2] == 1.0 and rep.ndcg[2] == 1.0
    assert all(v == 1.0 for v in rep.per_user["recall@2"])


def test_random_model_within_binomial_band():
    nu, ni, rel = 100, 1000, 10
    rng = np.random.default_rng(6)
    test = [(u, int(i)) for u in range(nu) for i in rng.choice(ni, rel, replace=False)]
    ds = explicit_dataset(nu, ni, test=test)
    rep = evaluate_embeddings(rng.normal(size=(nu, 8)), rng.normal(size=(ni, 8)), ds, (20,))
    # hits per user follow a hypergeometric law: draw 20 of 1000 with 10 marked
    mean = 20 / ni
    var_hits = 20 * (rel / ni) * (1 - rel / ni) * (ni - 20) / (ni - 1)
    sd = math.sqrt(var_hits / rel**2 / nu)
    assert abs(rep.recall[20] - mean) <= 3 * sd


def test_report_serialization():
    ds = _random_split_dataset(7)
    rng = np.random.default_rng(0)
    rep = evaluate_embeddings(rng.normal(size=(30, 3)), rng.normal(size=(60, 3)), ds, (10, 20))
    rep.label = "x"
    d = json.loads(rep.to_json())
    assert d["recall"]["20"] == rep.recall[20] and d["num_skipped"] == rep.num_skipped
    header, row = rep.to_csv().strip().split("\n")
    assert header == "label,split,users,recall@10,ndcg@10,recall@20,ndcg@20"
    assert row.startswith("x,test,")


def test_deterministic():
    ds = _random_split_dataset(8)
    rng = np.random.default_rng(1)
    ue, ie = rng.normal(size=(30, 4)), rng.normal(size=(60, 4))
    assert evaluate_embeddings(ue, ie, ds).to_json() == evaluate_embeddings(ue, ie, ds).to_json()


def test_export_embeddings(tmp_path):
    class Stub:
        def embeddings(self):
            return np.ones((2, 3)), np.array([[0.5, -1.0], [2.0, 0.25]])

    assert export_embeddings(Stub(), tmp_path / "e.tsv") == 2
    lines = (tmp_path / "e.tsv").read_text().splitlines()
    assert lines == ["0\t0.5,-1.0", "1\t2.0,0.25"]
