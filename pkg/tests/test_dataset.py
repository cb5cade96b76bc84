import numpy as np
import pytest
from scipy import stats

from multigccf.dataset import (
    EmptyDatasetError,
    ParseError,
    SplitConstraintError,
    filter_and_index,
    from_pairs,
    load_interactions,
    load_snapshot,
    sample_triplets,
    save_snapshot,
    split,
)
from multigccf.synthetic import block_dataset


def _write(tmp_path, text, name="data.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_collapses_duplicates(tmp_path):
    p = _write(tmp_path, "u1 i1\nu1 i1\nu2 i3\n")
    assert load_interactions(p) == [("u1", "i1"), ("u2", "i3")]


def test_load_accepts_extra_columns_comments_and_commas(tmp_path):
    p = _write(tmp_path, "# header\nu1,i1,5,1234\n\nu2, i2 ,3\nu1\ti2 4.0 99\n")
    assert load_interactions(p) == [("u1", "i1"), ("u2", "i2"), ("u1", "i2")]


def test_load_missing_item_is_parse_error(tmp_path):
    p = _write(tmp_path, "u1\n")
    with pytest.raises(ParseError) as exc:
        load_interactions(p)
    assert exc.value.lineno == 1


def test_load_empty_file(tmp_path):
    with pytest.raises(EmptyDatasetError):
        load_interactions(_write(tmp_path, "# nothing\n"))


def _recount(pairs):
    users, items = {}, {}
    for u, i in pairs:
        users[u] = users.get(u, 0) + 1
        items[i] = items.get(i, 0) + 1
    return users, items


def _brute_force_core(pairs, k):
    # remove one offending node at a time until none is left
    pairs = list(pairs)
    while True:
        users, items = _recount(pairs)
        bad_u = [u for u, c in users.items() if c < k]
        bad_i = [i for i, c in items.items() if c < k]
        if not bad_u and not bad_i:
            return set(pairs)
        if bad_u:
            pairs = [(u, i) for u, i in pairs if u != bad_u[0]]
        else:
            pairs = [(u, i) for u, i in pairs if i != bad_i[0]]


def _raw(ds):
    return {(ds.user_ids[u], ds.item_ids[i]) for u, i in ds.train}


def test_filter_removes_light_user():
    # a, b, d share ten items; c has only 2 and i11 is seen by a alone
    items = [f"i{k}" for k in range(10)]
    raw = [(u, i) for u in "abd" for i in items] + [("a", "i11"), ("c", "i0"), ("c", "i1")]
    ds = filter_and_index(raw, min_interactions=2)
    assert "c" in ds.user_ids
    ds = filter_and_index(raw, min_interactions=3)
    assert "c" not in ds.user_ids
    assert "i11" not in ds.item_ids  # only user a touched it
    assert _raw(ds) == _brute_force_core(raw, 3)


def test_filter_min_one_only_reindexes():
    raw = [("x", "p"), ("y", "q"), ("x", "q")]
    ds = filter_and_index(raw, 1)
    assert _raw(ds) == set(raw)
    assert ds.user_ids == ("x", "y") and ds.item_ids == ("p", "q")


def test_filter_adversarial_chain():
    # removing u0 drops item A to 1, whose removal drops u1 to 1, and so on
    raw = [("u0", "A"), ("u1", "A"), ("u1", "B"), ("u2", "B"), ("u2", "C"), ("u3", "C"), ("u3", "D"), ("u4", "D"), ("u4", "E"), ("u5", "E")]
    ds_expected = _brute_force_core(raw, 2)
    with pytest.raises(EmptyDatasetError):
        filter_and_index(raw, 2)
    assert ds_expected == set()


def test_filter_fixed_point_random():
    rng = np.random.default_rng(0)
    for trial in range(20):
        n = rng.integers(50, 300)
        raw = list({(f"u{a}", f"i{b}") for a, b in zip(rng.integers(0, 30, n), rng.zipf(1.6, n) % 40)})
        expected = _brute_force_core(raw, 3)
        if not expected:
            with pytest.raises(EmptyDatasetError):
                filter_and_index(raw, 3)
            continue
        ds = filter_and_index(raw, 3)
        assert _raw(ds) == expected
        users, items = _recount(_raw(ds))
        assert min(users.values()) >= 3 and min(items.values()) >= 3


def test_split_ten_items_is_8_1_1():
    pairs = [(0, i) for i in range(10)] + [(1, i) for i in range(10)]
    ds = from_pairs(pairs, ratios=(0.8, 0.1, 0.1), seed=3)
    for u in (0, 1):
        assert (ds.train[:, 0] == u).sum() == 8
        assert (ds.validation[:, 0] == u).sum() == 1
        assert (ds.test[:, 0] == u).sum() == 1


def test_split_deterministic_and_partitions():
    base = block_dataset(seed=4).dataset
    a = split(base, seed=11)
    b = split(base, seed=11)
    for name in ("train", "validation", "test"):
        assert a.split_pairs(name).tobytes() == b.split_pairs(name).tobytes()
    keys = [set(map(tuple, a.split_pairs(s).tolist())) for s in ("train", "validation", "test")]
    assert not (keys[0] & keys[1]) and not (keys[0] & keys[2]) and not (keys[1] & keys[2])
    assert sum(map(len, keys)) == base.num_interactions
    assert len(np.unique(a.train[:, 0])) == a.num_users
    assert len(np.unique(a.train[:, 1])) == a.num_items


def test_split_forces_lonely_item_into_train():
    # item 9 is seen by user 0 only; whatever the seed it must stay in train
    pairs = [(0, i) for i in range(10)] + [(u, i) for u in range(1, 4) for i in range(9)]
    for seed in range(20):
        ds = from_pairs(pairs, ratios=(0.8, 0.1, 0.1), seed=seed)
        assert [0, 9] in ds.train.tolist()
        assert len(np.unique(ds.train[:, 1])) == 10


def test_split_needs_three_interactions():
    with pytest.raises(SplitConstraintError):
        from_pairs([(0, 0), (0, 1), (1, 0), (1, 1), (1, 2)], ratios=(0.8, 0.1, 0.1))


def test_forced_negative():
    ds = from_pairs([(0, 0), (0, 1)], num_items=3, ratios=None)
    batch = sample_triplets(ds, 50, np.random.default_rng(0))
    assert np.all(batch[:, 2] == 2)


def test_batch_of_1024_triplets_valid():
    ds = block_dataset(seed=0).dataset
    batch = sample_triplets(ds, 1024, np.random.default_rng(1))
    assert batch.shape == (1024, 3)
    train = set(map(tuple, ds.train.tolist()))
    assert all((u, i) in train for u, i, _ in batch.tolist())
    assert not any((u, j) in train for u, _, j in batch.tolist())


def test_all_split_exclusion_option():
    ds = block_dataset(seed=0).dataset
    batch = sample_triplets(ds, 2048, np.random.default_rng(1), exclude=("train", "validation", "test"))
    known = set(map(tuple, np.concatenate([ds.train, ds.validation, ds.test]).tolist()))
    assert not any((u, j) in known for u, _, j in batch.tolist())


def test_negative_distribution_uniform():
    ds = from_pairs([(0, 0), (0, 1)], num_items=100, ratios=None)
    batch = sample_triplets(ds, 100_000, np.random.default_rng(7))
    counts = np.bincount(batch[:, 2], minlength=100)
    assert counts[0] == counts[1] == 0
    chi2 = stats.chisquare(counts[2:])
    assert chi2.pvalue > 1e-3


def test_saturated_user_is_skipped():
    # user 0 has every item; only user 1 can produce triplets
    ds = from_pairs([(0, 0), (0, 1), (0, 2), (1, 0)], num_items=3, ratios=None)
    batch = sample_triplets(ds, 100, np.random.default_rng(0))
    assert np.all(batch[:, 0] == 1)


def test_snapshot_roundtrip_and_determinism(tmp_path):
    ds = block_dataset(seed=2).dataset
    sha1 = save_snapshot(ds, tmp_path / "a.snap")
    sha2 = save_snapshot(block_dataset(seed=2).dataset, tmp_path / "b.snap")
    assert sha1 == sha2
    assert (tmp_path / "a.snap").read_bytes() == (tmp_path / "b.snap").read_bytes()
    back = load_snapshot(tmp_path / "a.snap")
    assert back.user_ids == ds.user_ids and back.item_ids == ds.item_ids
    for name in ("train", "validation", "test"):
        np.testing.assert_array_equal(back.split_pairs(name), ds.split_pairs(name))
    assert back.user_index(ds.user_ids[5]) == 5
