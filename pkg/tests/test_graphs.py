import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from multigccf.dataset import from_pairs
from multigccf.graphs import (
    build_bipartite,
    build_graphs,
    build_similarity_graph,
    calibrate_threshold,
    capped_adjacency,
    cosine_similarity,
    exact_degree_oracle,
    load_graphs,
    mean_matrix,
    presample,
    save_graphs,
)
from multigccf.synthetic import block_dataset


def _random_dataset(n_users, n_items, density, seed):
    rng = np.random.default_rng(seed)
    m = rng.random((n_users, n_items)) < density
    m[np.arange(n_users), rng.integers(0, n_items, n_users)] = True  # nobody empty
    m[rng.integers(0, n_users, n_items), np.arange(n_items)] = True
    pairs = np.argwhere(m)
    return from_pairs(pairs, n_users, n_items, ratios=None), m


def _brute_cosine(m):
    m = m.astype(float)
    norms = np.sqrt(m.sum(axis=1))
    sims = (m @ m.T) / np.outer(norms, norms)
    np.fill_diagonal(sims, 0.0)
    return sims


# -- bipartite ---------------------------------------------------------------------


def test_bipartite_transcription():
    ds = from_pairs([(0, 0), (0, 1), (1, 1)], 2, 2, ratios=None)
    g = build_bipartite(ds)
    assert g.user_neighbors == [[0, 1], [1]]
    assert g.item_neighbors == [[0], [0, 1]]


def test_bipartite_single_interaction():
    g = build_bipartite(from_pairs([(0, 0)], 1, 1, ratios=None))
    assert g.degrees("user").tolist() == [1] and g.degrees("item").tolist() == [1]


def test_bipartite_recount_and_symmetry():
    ds, m = _random_dataset(50, 50, 0.1, 0)
    g = build_bipartite(ds)
    assert g.num_edges == len(ds.train) == m.sum()
    for u, items in enumerate(g.user_neighbors):
        for v in items:
            assert u in g.item_neighbors[v]
    assert sum(map(len, g.item_neighbors)) == g.num_edges


def test_bipartite_uses_train_only():
    base = block_dataset(seed=0).dataset
    g = build_bipartite(base)
    held = set(map(tuple, np.concatenate([base.validation, base.test]).tolist()))
    edges = {(u, v) for u, items in enumerate(g.user_neighbors) for v in items}
    assert not edges & held


# -- cosine ------------------------------------------------------------------------


def test_cosine_examples():
    assert cosine_similarity([1, 4, 7], [7, 4, 1]) == 1.0
    assert cosine_similarity([0, 1], [2, 3]) == 0.0
    a = [0, 1, 2, 3]
    b = [1, 2, 3, 10, 11, 12, 13, 14, 15]
    assert cosine_similarity(a, b) == 0.5
    assert cosine_similarity([], [1]) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.sets(st.integers(0, 30)), st.sets(st.integers(0, 30)))
def test_cosine_properties(a, b):
    s = cosine_similarity(sorted(a), sorted(b))
    assert s == cosine_similarity(sorted(b), sorted(a))
    assert 0.0 <= s <= 1.0 + 1e-15
    assert (abs(s - 1.0) < 1e-12) == (bool(a) and a == b)


# -- calibration -------------------------------------------------------------------


def test_calibrate_uniform_similarity():
    oracle = exact_degree_oracle(np.full(3, 0.6), 3)
    t, ok = calibrate_threshold(oracle, 2)
    assert ok
    assert 0.6 - 1e-4 <= t <= 0.6
    assert oracle(t) == 2


def test_calibrate_unreachable_warns():
    oracle = exact_degree_oracle(np.full(3, 0.6), 3)
    with pytest.warns(RuntimeWarning):
        t, ok = calibrate_threshold(oracle, 5)
    assert (t, ok) == (0.0, False)


def test_calibrate_rejects_small_target():
    with pytest.raises(ValueError):
        calibrate_threshold(lambda t: 3.0, 0.5)


def test_calibrate_100_nodes_against_exact_count():
    ds, m = _random_dataset(100, 80, 0.08, 1)
    g = build_similarity_graph(ds, "user", target_avg_degree=10, max_degree=None)
    sims = _brute_cosine(m)
    exact = np.count_nonzero((sims >= g.threshold) & (sims > 0)) / 100
    assert exact == pytest.approx(g.avg_degree, abs=1e-12)
    assert 8 <= exact <= 12


def test_threshold_is_largest_reaching_target():
    ds, m = _random_dataset(100, 80, 0.08, 2)
    g = build_similarity_graph(ds, "user", target_avg_degree=10, max_degree=None)
    sims = _brute_cosine(m)
    assert np.count_nonzero(sims >= g.threshold) / 100 >= 10
    above = np.nextafter(g.threshold, 2.0)
    assert np.count_nonzero(sims >= above) / 100 < 10


# -- similarity graphs --------------------------------------------------------------


def test_identical_histories_connected_both_ways():
    pairs = [(0, 0), (0, 1), (1, 0), (1, 1), (2, 2), (2, 3), (3, 3), (3, 4)]
    ds = from_pairs(pairs, 4, 5, ratios=None)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        g = build_similarity_graph(ds, "user", target_avg_degree=1)
    assert g.threshold < 1.0 or g.edges_at(1.0) > 0
    assert 1 in g.neighbors(0) and 0 in g.neighbors(1)


def test_isolated_user_has_no_neighbors():
    pairs = [(0, 0), (0, 1), (1, 0), (1, 1), (2, 2)]
    ds = from_pairs(pairs, 3, 3, ratios=None)
    with pytest.warns(RuntimeWarning, match="unreachable"):
        g = build_similarity_graph(ds, "user", target_avg_degree=1)
    assert not g.reachable
    assert g.neighbors(2).size == 0


def _check_symmetric_no_loops(g):
    a = g.adj
    assert (a != a.T).nnz == 0
    assert a.diagonal().sum() == 0
    assert (g.weights != g.weights.T).nnz == 0


@pytest.mark.parametrize("axis", ["user", "item"])
def test_block_graph_within_block_edges(axis):
    data = block_dataset(seed=0)
    g = build_similarity_graph(data.dataset, axis, target_avg_degree=10)
    labels = data.user_block if axis == "user" else data.item_block
    _check_symmetric_no_loops(g)
    coo = g.adj.tocoo()
    same = np.mean(labels[coo.row] == labels[coo.col])
    assert same >= 0.9
    assert 8 <= g.avg_degree <= 12


def test_degree_cap_respected_and_symmetric():
    ds, _ = _random_dataset(120, 20, 0.3, 4)
    g = build_similarity_graph(ds, "user", target_avg_degree=40, max_degree=16)
    assert np.diff(g.adj.indptr).max() <= 16
    _check_symmetric_no_loops(g)


def test_sampled_degree_estimate_close_to_exact():
    ds, _ = _random_dataset(400, 150, 0.05, 5)
    exact = build_similarity_graph(ds, "user", target_avg_degree=10, max_degree=None)
    est = build_similarity_graph(ds, "user", target_avg_degree=10, max_degree=None, exact_cutoff=100, sample_size=200, seed=1)
    assert 8 <= est.avg_degree <= 12
    assert abs(est.threshold - exact.threshold) < 0.1


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_threshold_monotonicity(t1, t2):
    g = _MONO_GRAPH
    lo, hi = sorted((t1, t2))
    assert g.edges_at(hi) <= g.edges_at(lo)


_MONO_GRAPH = build_similarity_graph(_random_dataset(80, 60, 0.1, 6)[0], "user", target_avg_degree=30, max_degree=None)


# -- presampling ---------------------------------------------------------------------


def test_single_neighbor_repeated():
    ds = from_pairs([(0, 0), (1, 0), (1, 1)], 2, 2, ratios=None)
    t = presample(build_bipartite(ds), sizes=(10,), num_sets=3)
    for k in range(3):
        assert t.lists("user", 0, k)[0].tolist() == [0] * 10


def test_presample_uniform_frequency():
    pairs = [(0, v) for v in range(100)]
    ds = from_pairs(pairs, 1, 100, ratios=None)
    t = presample(build_bipartite(ds), sizes=(10,), num_sets=10_000, seed=3)
    draws = t.tables["user"][0][:, 0, :].ravel()
    assert draws.size == 100_000
    counts = np.bincount(draws, minlength=100)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_thirty_sets_and_membership_scan():
    data = block_dataset(seed=1).dataset
    g = build_bipartite(data)
    t = presample(g, sizes=(15, 10), num_sets=30, seed=0)
    for side in ("user", "item"):
        adj = g.adjacency(side)
        n = adj.shape[0]
        for hop, size in enumerate((15, 10)):
            arr = t.tables[side][hop]
            assert arr.shape == (30, n, size)
            rows = np.broadcast_to(np.arange(n)[None, :, None], arr.shape)
            assert np.all(np.asarray(adj[rows.ravel(), arr.ravel()]).ravel() == 1)


def test_presample_isolated_sentinel():
    ds = from_pairs([(0, 0), (0, 1)], 2, 3, ratios=None)
    t = presample(build_bipartite(ds), sizes=(4,), num_sets=2)
    assert np.all(t.lists("user", 0, 0)[1] == -1)
    assert np.all(t.lists("item", 0, 1)[2] == -1)


def test_presample_deterministic():
    g = build_bipartite(block_dataset(seed=0).dataset)
    a, b = presample(g, num_sets=4, seed=9), presample(g, num_sets=4, seed=9)
    for side in ("user", "item"):
        for x, y in zip(a.tables[side], b.tables[side]):
            np.testing.assert_array_equal(x, y)


def test_mean_matrix_permutation_bitwise():
    rng = np.random.default_rng(0)
    lists = rng.integers(0, 7, size=(5, 9))
    m1 = mean_matrix(lists, 7)
    m2 = mean_matrix(rng.permuted(lists, axis=1), 7)
    assert m1.data.tobytes() == m2.data.tobytes()
    np.testing.assert_allclose(m1.sum(axis=1), 1.0)


def test_capped_adjacency_keeps_highest_degree():
    # item 0 has users 0..5; cap to 3 keeps the three users with most items
    pairs = [(u, 0) for u in range(6)] + [(5, 1), (5, 2), (4, 1), (4, 2), (3, 1)]
    g = build_bipartite(from_pairs(pairs, 6, 3, ratios=None))
    capped = capped_adjacency(g, "item", cap=3)
    assert capped[0].indices.tolist() == [3, 4, 5]


def test_graph_bundle_roundtrip(tmp_path):
    ds = block_dataset(seed=0).dataset
    b = build_graphs(ds, num_sets=3)
    sha = save_graphs(b, tmp_path / "g.bin", "abc")
    back = load_graphs(tmp_path / "g.bin")
    assert save_graphs(back, tmp_path / "h.bin", "abc") == sha
    assert back.user_graph.threshold == b.user_graph.threshold
    assert (back.item_graph.adj != b.item_graph.adj).nnz == 0
    np.testing.assert_array_equal(back.table.tables["item"][1], b.table.tables["item"][1])
