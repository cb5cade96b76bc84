"""Bipartite, user-user and item-item graphs plus pre-sampled neighbor tables."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp

from .bundle import read_bundle, write_bundle
from .dataset import InteractionDataset

logger = logging.getLogger(__name__)

GRAPHS_KIND = "graph-bundle"
SIDES = ("user", "item")


def other_side(side: str) -> str:
    if side not in SIDES:
        raise ValueError(f"side must be 'user' or 'item', got {side!r}")
    return "item" if side == "user" else "user"


def _binary_csr(rows, cols, shape) -> sp.csr_matrix:
    m = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=shape)
    m.sum_duplicates()
    m.data[:] = 1.0
    m.sort_indices()
    return m


@dataclass(frozen=True)
class BipartiteGraph:
    """Train interactions as two CSR adjacency matrices (user x item, item x user)."""

    user_adj: sp.csr_matrix
    item_adj: sp.csr_matrix

    @property
    def num_users(self) -> int:
        return self.user_adj.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_adj.shape[0]

    @property
    def num_edges(self) -> int:
        return self.user_adj.nnz

    def adjacency(self, side: str) -> sp.csr_matrix:
        return self.user_adj if side == "user" else self.item_adj

    def neighbors(self, side: str, node: int) -> np.ndarray:
        adj = self.adjacency(side)
        return adj.indices[adj.indptr[node] : adj.indptr[node + 1]]

    @property
    def user_neighbors(self) -> list[list[int]]:
        return [self.neighbors("user", u).tolist() for u in range(self.num_users)]

    @property
    def item_neighbors(self) -> list[list[int]]:
        return [self.neighbors("item", v).tolist() for v in range(self.num_items)]

    def degrees(self, side: str) -> np.ndarray:
        return np.diff(self.adjacency(side).indptr)


def build_bipartite(dataset: InteractionDataset) -> BipartiteGraph:
    if len(dataset.train) == 0:
        raise ValueError("cannot build a bipartite graph from an empty train set")
    u, v = dataset.train[:, 0], dataset.train[:, 1]
    return BipartiteGraph(
        _binary_csr(u, v, (dataset.num_users, dataset.num_items)),
        _binary_csr(v, u, (dataset.num_items, dataset.num_users)),
    )


def cosine_similarity(a, b) -> float:
    """Cosine similarity of two binary vectors given as index collections."""
    a, b = set(np.asarray(a).tolist()), set(np.asarray(b).tolist())
    if not a or not b:
        return 0.0
    return len(a & b) / float(np.sqrt(len(a) * len(b)))


def _similarity_rows(x: sp.csr_matrix, rows: np.ndarray, chunk: int = 1024):
    """Yield ``(r, c, sim)`` for positive cosine similarities of ``rows`` vs all rows, no self pairs."""
    norms = np.sqrt(np.asarray(x.getnnz(axis=1), dtype=np.float64))
    xt = x.T.tocsr()
    for lo in range(0, len(rows), chunk):
        block = rows[lo : lo + chunk]
        co = (x[block] @ xt).tocoo()
        r = block[co.row]
        c = co.col.astype(np.int64)
        keep = r != c
        r, c, counts = r[keep], c[keep], co.data[keep]
        yield r, c, counts / (norms[r] * norms[c])


class Calibration(NamedTuple):
    threshold: float
    reachable: bool


def calibrate_threshold(
    avg_degree_at: Callable[[float], float], target_avg_degree: float, tol: float = 1e-4
) -> Calibration:
    """Largest cutoff ``t`` in [0, 1] with ``avg_degree_at(t) >= target``.

    ``avg_degree_at`` must be non-increasing in ``t``. Bisection stops when
    the bracket is narrower than ``tol``. If even ``t = 0`` misses the
    target, returns ``(0.0, False)`` and emits a warning.
    """
    if target_avg_degree < 1:
        raise ValueError("target_avg_degree must be >= 1")
    if avg_degree_at(0.0) < target_avg_degree:
        warnings.warn(
            f"average degree {target_avg_degree} unreachable (max {avg_degree_at(0.0):.3f}); using threshold 0",
            RuntimeWarning,
            stacklevel=2,
        )
        return Calibration(0.0, False)
    if avg_degree_at(1.0) >= target_avg_degree:
        return Calibration(1.0, True)
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if avg_degree_at(mid) >= target_avg_degree:
            lo = mid
        else:
            hi = mid
    return Calibration(lo, True)


def exact_degree_oracle(upper_sims: np.ndarray, num_nodes: int) -> Callable[[float], float]:
    """Average undirected degree at cutoff ``t`` from all pairwise (i < j) similarities."""
    s = np.sort(np.asarray(upper_sims, dtype=np.float64))
    s = s[s > 0]

    def avg_degree_at(t: float) -> float:
        cut = max(t, np.nextafter(0.0, 1.0))
        return 2.0 * (len(s) - np.searchsorted(s, cut, side="left")) / num_nodes

    return avg_degree_at


@dataclass(frozen=True)
class SimilarityGraph:
    """Symmetric, self-loop-free thresholded cosine-similarity graph."""

    adj: sp.csr_matrix
    weights: sp.csr_matrix
    threshold: float
    target_avg_degree: float
    reachable: bool

    @property
    def num_nodes(self) -> int:
        return self.adj.shape[0]

    @property
    def num_edges(self) -> int:
        return self.adj.nnz // 2

    @property
    def avg_degree(self) -> float:
        return self.adj.nnz / self.num_nodes

    def neighbors(self, node: int) -> np.ndarray:
        return self.adj.indices[self.adj.indptr[node] : self.adj.indptr[node + 1]]

    def edges_at(self, t: float) -> int:
        """Undirected edge count if the cutoff were raised to ``t``."""
        return int(np.count_nonzero(self.weights.data >= t)) // 2


def _cap_degree(weights: sp.csr_matrix, max_degree: int) -> sp.csr_matrix:
    """Keep an edge only if it is among the ``max_degree`` most similar of both endpoints."""
    n = weights.shape[0]
    keep = np.zeros(weights.nnz, dtype=bool)
    for node in range(n):
        lo, hi = weights.indptr[node], weights.indptr[node + 1]
        if hi - lo <= max_degree:
            keep[lo:hi] = True
            continue
        # highest similarity first, ties by lower index
        order = np.lexsort((weights.indices[lo:hi], -weights.data[lo:hi]))
        keep[lo + order[:max_degree]] = True
    coo = weights.tocoo()
    kept = sp.csr_matrix((keep.astype(np.float64), (coo.row, coo.col)), shape=weights.shape)
    both = kept.multiply(kept.T)
    mask = sp.csr_matrix(both)
    mask.eliminate_zeros()
    out = weights.multiply(mask.astype(bool)).tocsr()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def build_similarity_graph(
    dataset: InteractionDataset,
    axis: str,
    target_avg_degree: float = 10,
    max_degree: int = 64,
    exact_cutoff: int = 20000,
    sample_size: int = 2000,
    seed: int = 0,
    tol: float = 1e-4,
) -> SimilarityGraph:
    """User-user (``axis="user"``) or item-item graph over train interactions.

    The cutoff is calibrated so the average degree reaches the target. Above
    ``exact_cutoff`` nodes the degree curve is estimated from ``sample_size``
    random nodes.
    """
    x = dataset.matrix("train")
    if axis == "item":
        x = x.T.tocsr()
    elif axis != "user":
        raise ValueError(f"axis must be 'user' or 'item', got {axis!r}")
    x.sort_indices()
    n = x.shape[0]

    if n <= exact_cutoff:
        upper = []
        for r, c, s in _similarity_rows(x, np.arange(n)):
            upper.append(s[c > r])
        upper = np.concatenate(upper) if upper else np.empty(0)
        oracle = exact_degree_oracle(upper, n)
        pos = np.sort(upper[upper > 0])
    else:
        rng = np.random.default_rng(seed)
        rows = np.sort(rng.choice(n, size=sample_size, replace=False))
        pos = np.sort(np.concatenate([s for _, _, s in _similarity_rows(x, rows)]))
        k = len(rows)

        def oracle(t: float) -> float:
            cut = max(t, np.nextafter(0.0, 1.0))
            return (len(pos) - np.searchsorted(pos, cut, side="left")) / k

    cal = calibrate_threshold(oracle, target_avg_degree, tol)
    threshold = cal.threshold
    # snap up to the smallest observed similarity at or above the cutoff: same edges, exact value
    i = np.searchsorted(pos, max(threshold, np.nextafter(0.0, 1.0)), side="left")
    if cal.reachable and i < len(pos):
        threshold = float(pos[i])

    rs, cs, ws = [], [], []
    for r, c, s in _similarity_rows(x, np.arange(n)):
        keep = s >= max(threshold, np.nextafter(0.0, 1.0))
        rs.append(r[keep])
        cs.append(c[keep])
        ws.append(s[keep])
    r = np.concatenate(rs) if rs else np.empty(0, np.int64)
    c = np.concatenate(cs) if cs else np.empty(0, np.int64)
    w = np.concatenate(ws) if ws else np.empty(0)
    weights = sp.csr_matrix((w, (r, c)), shape=(n, n))
    weights.sort_indices()
    if max_degree is not None:
        weights = _cap_degree(weights, max_degree)
    adj = weights.copy()
    adj.data[:] = 1.0
    graph = SimilarityGraph(adj, weights, threshold, target_avg_degree, cal.reachable)
    logger.info("%s graph: threshold %.4f, avg degree %.2f", axis, threshold, graph.avg_degree)
    return graph


@dataclass(frozen=True)
class SampledNeighborTable:
    """Pre-sampled neighbor lists.

    ``tables[side][hop]`` is an int32 array ``(num_sets, num_nodes, sizes[hop])``
    of other-side node indices drawn uniformly with replacement; rows of
    isolated nodes hold -1.
    """

    sizes: tuple[int, ...]
    num_sets: int
    tables: dict

    def lists(self, side: str, hop: int, set_index: int) -> np.ndarray:
        return self.tables[side][hop][set_index % self.num_sets]


def presample(graph: BipartiteGraph, sizes=(15, 10), num_sets: int = 30, seed: int = 0) -> SampledNeighborTable:
    """Draw ``num_sets`` independent neighbor lists per node and hop size.

    Each set has its own RNG stream spawned from ``seed``.
    """
    sizes = tuple(int(s) for s in sizes)
    if min(sizes) < 1 or num_sets < 1:
        raise ValueError("sizes and num_sets must be >= 1")
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(num_sets)]
    tables = {side: [np.empty((num_sets, graph.adjacency(side).shape[0], s), np.int32) for s in sizes] for side in SIDES}
    for k, rng in enumerate(streams):
        for side in SIDES:
            adj = graph.adjacency(side)
            deg = np.diff(adj.indptr)
            for hop, size in enumerate(sizes):
                offs = np.floor(rng.random((len(deg), size)) * deg[:, None]).astype(np.int64)
                pos = np.minimum(adj.indptr[:-1, None] + offs, max(adj.nnz - 1, 0))
                out = adj.indices[pos] if adj.nnz else np.zeros_like(pos)
                out[deg == 0] = -1
                tables[side][hop][k] = out
    return SampledNeighborTable(sizes, num_sets, tables)


def mean_matrix(lists: np.ndarray, num_cols: int) -> sp.csr_matrix:
    """Row-stochastic CSR averaging the (possibly repeated) indices of each row.

    Weights are exact ``count / len`` and column indices are sorted, so any
    permutation of a row gives a bitwise-identical matrix. -1 entries are
    ignored.
    """
    lists = np.asarray(lists, dtype=np.int64)
    n, s = lists.shape
    rows = np.repeat(np.arange(n), s)
    cols = lists.ravel()
    ok = cols >= 0
    keys, counts = np.unique(rows[ok] * num_cols + cols[ok], return_counts=True)
    r, c = keys // num_cols, keys % num_cols
    valid = np.bincount(rows[ok], minlength=n)
    data = counts / valid[r]
    return sp.csr_matrix((data, (r, c)), shape=(n, num_cols))


def row_normalize(adj: sp.csr_matrix) -> sp.csr_matrix:
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    out = sp.diags(inv) @ adj
    out = sp.csr_matrix(out)
    out.sort_indices()
    return out


def capped_adjacency(graph: BipartiteGraph, side: str, cap: int | None = 50) -> sp.csr_matrix:
    """Full neighbor lists, truncated to the ``cap`` highest-degree neighbors
    (ties by lower index) for hub nodes."""
    adj = graph.adjacency(side)
    if cap is None:
        return adj
    other_deg = graph.degrees(other_side(side))
    rows, cols = [], []
    for node in range(adj.shape[0]):
        nb = adj.indices[adj.indptr[node] : adj.indptr[node + 1]]
        if len(nb) > cap:
            nb = np.sort(nb[np.lexsort((nb, -other_deg[nb]))[:cap]])
        rows.append(np.full(len(nb), node))
        cols.append(nb)
    return _binary_csr(np.concatenate(rows), np.concatenate(cols), adj.shape)


def sampled_union_adjacency(table: SampledNeighborTable, side: str, hop: int, num_other: int) -> sp.csr_matrix:
    """Union over all pre-sampled sets of a node's neighbors at ``hop``."""
    t = table.tables[side][hop]
    n = t.shape[1]
    rows = np.broadcast_to(np.arange(n)[None, :, None], t.shape).ravel()
    cols = t.ravel().astype(np.int64)
    ok = cols >= 0
    return _binary_csr(rows[ok], cols[ok], (n, num_other))


@dataclass(frozen=True)
class GraphBundle:
    bipartite: BipartiteGraph
    user_graph: SimilarityGraph
    item_graph: SimilarityGraph
    table: SampledNeighborTable

    def similarity(self, side: str) -> SimilarityGraph:
        return self.user_graph if side == "user" else self.item_graph


def build_graphs(
    dataset: InteractionDataset,
    sizes=(15, 10),
    num_sets: int = 30,
    target_avg_degree: float = 10,
    max_mge_degree: int = 64,
    seed: int = 0,
    exact_cutoff: int = 20000,
    sample_size: int = 2000,
) -> GraphBundle:
    bip = build_bipartite(dataset)
    kw = dict(
        target_avg_degree=target_avg_degree,
        max_degree=max_mge_degree,
        exact_cutoff=exact_cutoff,
        sample_size=sample_size,
        seed=seed,
    )
    return GraphBundle(
        bip,
        build_similarity_graph(dataset, "user", **kw),
        build_similarity_graph(dataset, "item", **kw),
        presample(bip, sizes, num_sets, seed),
    )


def _csr_arrays(prefix: str, m: sp.csr_matrix) -> dict:
    return {f"{prefix}/indptr": m.indptr.astype(np.int64), f"{prefix}/indices": m.indices.astype(np.int64), f"{prefix}/data": m.data.astype(np.float64)}


def _csr_from(arrays: dict, prefix: str, shape) -> sp.csr_matrix:
    m = sp.csr_matrix((arrays[f"{prefix}/data"], arrays[f"{prefix}/indices"], arrays[f"{prefix}/indptr"]), shape=shape)
    m.sort_indices()
    return m


def save_graphs(bundle: GraphBundle, path, dataset_sha256: str | None = None) -> str:
    nu, ni = bundle.bipartite.num_users, bundle.bipartite.num_items
    meta = {
        "num_users": nu,
        "num_items": ni,
        "sizes": list(bundle.table.sizes),
        "num_sets": bundle.table.num_sets,
        "dataset_sha256": dataset_sha256,
    }
    arrays = {}
    arrays.update(_csr_arrays("bipartite/user", bundle.bipartite.user_adj))
    arrays.update(_csr_arrays("bipartite/item", bundle.bipartite.item_adj))
    for side, g in (("user", bundle.user_graph), ("item", bundle.item_graph)):
        meta[f"{side}_graph"] = {
            "threshold": g.threshold,
            "target_avg_degree": g.target_avg_degree,
            "reachable": g.reachable,
        }
        arrays.update(_csr_arrays(f"similarity/{side}", g.weights))
        for hop, t in enumerate(bundle.table.tables[side]):
            arrays[f"sampled/{side}/{hop}"] = t
    return write_bundle(path, GRAPHS_KIND, meta, arrays)


def load_graphs(path) -> GraphBundle:
    meta, arrays = read_bundle(path, GRAPHS_KIND)
    nu, ni = meta["num_users"], meta["num_items"]
    bip = BipartiteGraph(_csr_from(arrays, "bipartite/user", (nu, ni)), _csr_from(arrays, "bipartite/item", (ni, nu)))
    sims = {}
    tables = {}
    for side, n in (("user", nu), ("item", ni)):
        w = _csr_from(arrays, f"similarity/{side}", (n, n))
        adj = w.copy()
        adj.data[:] = 1.0
        g = meta[f"{side}_graph"]
        sims[side] = SimilarityGraph(adj, w, g["threshold"], g["target_avg_degree"], g["reachable"])
        tables[side] = [arrays[f"sampled/{side}/{hop}"] for hop in range(len(meta["sizes"]))]
    table = SampledNeighborTable(tuple(meta["sizes"]), meta["num_sets"], tables)
    return GraphBundle(bip, sims["user"], sims["item"], table)
