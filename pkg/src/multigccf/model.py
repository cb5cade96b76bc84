"""Multi-GCCF: bipartite GCN encoder, similarity-graph encoder, skip
connection, fusion and the BPR objective; plus the BPRMF baseline."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np
import scipy.sparse as sp

from .graphs import (
    SIDES,
    GraphBundle,
    capped_adjacency,
    mean_matrix,
    other_side,
    row_normalize,
    sampled_union_adjacency,
)
from .numerics import DimensionError, Node, ParameterStore, Tape, load_checkpoint, save_checkpoint, xavier_init

FUSION_MODES = ("sum", "concat", "attention")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    input_dim: int = 512
    layer1_dim: int = 128
    output_dim: int = 64
    num_gcn_layers: int = 2
    sample_sizes: tuple[int, ...] = (15, 10)
    fusion: str = "sum"
    dropout_rate: float = 0.2
    reg_lambda: float = 0.01
    reg_beta: float = 0.02
    use_bipar: bool = True
    use_mge: bool = True
    use_skip: bool = True
    # also put the initial embedding tables under the lambda penalty
    regularize_embedding_tables: bool = False
    attention_dim: int | None = None
    # inference-time neighborhoods: "full" (capped) or "sampled" (union of pre-sampled sets)
    eval_neighbors: str = "full"
    max_eval_neighbors: int | None = 50

    def __post_init__(self):
        self.sample_sizes = tuple(int(s) for s in self.sample_sizes)
        self.validate()

    def validate(self) -> None:
        for name in ("input_dim", "layer1_dim", "output_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.num_gcn_layers < 1:
            raise ConfigError("num_gcn_layers must be >= 1")
        if self.use_bipar and len(self.sample_sizes) < self.num_gcn_layers:
            raise ConfigError(
                f"{self.num_gcn_layers} GCN layers need {self.num_gcn_layers} sample sizes, got {self.sample_sizes}"
            )
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")
        if not (self.use_bipar or self.use_mge or self.use_skip):
            raise ConfigError("at least one of bipar / mge / skip branches must be enabled")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if self.eval_neighbors not in ("full", "sampled"):
            raise ConfigError("eval_neighbors must be 'full' or 'sampled'")

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim] + [self.layer1_dim] * (self.num_gcn_layers - 1) + [self.output_dim]

    @property
    def branches(self) -> list[str]:
        return [b for b, on in (("bipar", self.use_bipar), ("mge", self.use_mge), ("skip", self.use_skip)) if on]

    @property
    def fused_dim(self) -> int:
        return self.output_dim * (len(self.branches) if self.fusion == "concat" else 1)

    def ablation_flags(self) -> dict:
        return {"use_bipar": self.use_bipar, "use_mge": self.use_mge, "use_skip": self.use_skip, "hops": self.num_gcn_layers}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sample_sizes"] = list(self.sample_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# -- neighborhoods ------------------------------------------------------------


def take_rows(m: sp.csr_matrix, rows: np.ndarray) -> sp.csr_matrix:
    """``m[rows]`` built straight from the CSR arrays (scipy's fancy indexing is slow on small inputs)."""
    rows = np.asarray(rows, dtype=np.int64)
    starts, ends = m.indptr[rows], m.indptr[rows + 1]
    lengths = ends - starts
    indptr = np.concatenate([[0], np.cumsum(lengths)])
    pos = np.repeat(starts - indptr[:-1], lengths) + np.arange(indptr[-1])
    return sp.csr_matrix((m.data[pos], m.indices[pos], indptr), shape=(len(rows), m.shape[1]))


def restrict_columns(m: sp.csr_matrix, cols: np.ndarray) -> sp.csr_matrix:
    """Re-index ``m``'s columns into sorted ``cols``, which must contain every stored column."""
    return sp.csr_matrix((m.data, np.searchsorted(cols, m.indices), m.indptr), shape=(m.shape[0], len(cols)))



class SampledNeighbors:
    """Training neighborhoods from one pre-sampled set.

    Layer ``k`` of a ``K``-layer encoder aggregates over hop ``K - k``: the
    target's own aggregation (layer K) uses the first size, deeper layers the
    following ones.
    """

    def __init__(self, graphs: GraphBundle, set_index: int, num_layers: int, cache: dict | None = None):
        self.graphs = graphs
        self.set_index = set_index % graphs.table.num_sets
        self.num_layers = num_layers
        # full per-(set, side, hop) matrices, shared across calls by the owning model
        self._cache = {} if cache is None else cache

    def matrix(self, side: str, layer: int, nodes: np.ndarray) -> sp.csr_matrix:
        hop = self.num_layers - layer
        key = (self.set_index, side, hop)
        full = self._cache.get(key)
        if full is None:
            lists = self.graphs.table.lists(side, hop, self.set_index)
            n_other = self.graphs.bipartite.adjacency(other_side(side)).shape[0]
            full = self._cache[key] = mean_matrix(lists, n_other)
        return take_rows(full, nodes)


class FullNeighbors:
    """Inference neighborhoods: mean over (capped) full adjacency lists."""

    def __init__(self, graphs: GraphBundle, cap: int | None = 50):
        self._norm = {side: row_normalize(capped_adjacency(graphs.bipartite, side, cap)) for side in SIDES}

    def matrix(self, side: str, layer: int, nodes: np.ndarray) -> sp.csr_matrix:
        return take_rows(self._norm[side], nodes)


class UnionSampledNeighbors:
    """Inference neighborhoods: mean over the union of every pre-sampled set."""

    def __init__(self, graphs: GraphBundle, num_layers: int):
        self.num_layers = num_layers
        self._norm = {}
        for side in SIDES:
            n_other = graphs.bipartite.adjacency(other_side(side)).shape[0]
            self._norm[side] = [
                row_normalize(sampled_union_adjacency(graphs.table, side, hop, n_other))
                for hop in range(len(graphs.table.sizes))
            ]

    def matrix(self, side: str, layer: int, nodes: np.ndarray) -> sp.csr_matrix:
        return take_rows(self._norm[side][self.num_layers - layer], nodes)


# -- encoders -------------------------------------------------------------------


def bipar_gcn_encode(
    tape: Tape,
    params: ParameterStore,
    num_layers: int,
    targets: dict[str, np.ndarray],
    neighbors,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> dict[str, Node]:
    """Layer-K bipartite GCN embeddings for sorted unique ``targets[side]``.

    Per layer: ``h_N = tanh(mean(h_nbr) Q)`` (dropped out when training),
    ``h = tanh([h_self ; h_N] W)``, with user/item sides using their own W, Q.
    Only nodes reachable from the targets through the sampled tree are
    computed, each once.
    """
    need = [dict() for _ in range(num_layers + 1)]
    mats = [dict() for _ in range(num_layers + 1)]
    need[num_layers] = {s: np.asarray(targets.get(s, np.empty(0, np.int64)), dtype=np.int64) for s in SIDES}
    for k in range(num_layers, 0, -1):
        for s in SIDES:
            mats[k][s] = neighbors.matrix(s, k, need[k][s])
        for s in SIDES:
            from_other = np.unique(mats[k][other_side(s)].indices)
            need[k - 1][s] = np.union1d(need[k][s], from_other).astype(np.int64)

    h = {s: tape.gather(tape.param(params[f"e_{s}"]), need[0][s]) for s in SIDES}
    for k in range(1, num_layers + 1):
        nxt = {}
        for s in SIDES:
            o = other_side(s)
            local = restrict_columns(mats[k][s], need[k - 1][o])
            agg = tape.spmm(local, h[o])
            agg = tape.tanh(tape.matmul(agg, tape.param(params[f"Q_{s}_{k}"])))
            agg = tape.dropout(agg, dropout_rate, rng, training)
            self_rows = np.searchsorted(need[k - 1][s], need[k][s])
            own = tape.gather(h[s], self_rows)
            nxt[s] = tape.tanh(tape.matmul(tape.concat_cols(own, agg), tape.param(params[f"W_{s}_{k}"])))
        h = nxt
    return h


def mge_encode(tape: Tape, params: ParameterStore, side: str, nodes: np.ndarray, adj: sp.csr_matrix) -> Node:
    """``z = tanh(sum_{j in N'(node)} e_j M)``; isolated nodes give zeros."""
    agg = tape.spmm(take_rows(adj, nodes), tape.param(params[f"e_{side}"]))
    return tape.tanh(tape.matmul(agg, tape.param(params[f"M_{side}"])))


def skip_encode(tape: Tape, params: ParameterStore, side: str, nodes: np.ndarray) -> Node:
    e = tape.gather(tape.param(params[f"e_{side}"]), nodes)
    return tape.tanh(tape.matmul(e, tape.param(params[f"S_{side}"])))


def fuse(tape: Tape, branches: list[Node], mode: str, params: ParameterStore | None = None, side: str = "user") -> Node:
    """Combine branch embeddings by element-wise sum, concatenation or attention.

    Attention computes one softmax weight per branch from
    ``tanh(sum_b x_b Wa_b) Was`` and returns the weighted sum of branches.
    """
    if not branches:
        raise ConfigError("fuse needs at least one branch")
    dims = {b.shape for b in branches}
    if len(dims) != 1:
        raise DimensionError(f"fuse: branch shapes differ: {[b.shape for b in branches]}")
    if mode == "sum":
        out = branches[0]
        for b in branches[1:]:
            out = tape.add(out, b)
        return out
    if mode == "concat":
        return branches[0] if len(branches) == 1 else tape.concat_cols(*branches)
    if mode == "attention":
        weights = attention_weights(tape, branches, params, side)
        out = None
        for b, x in enumerate(branches):
            term = tape.mul(x, tape.take_cols(weights, b, b + 1))
            out = term if out is None else tape.add(out, term)
        return out
    raise ConfigError(f"unknown fusion mode {mode!r}")


def attention_weights(tape: Tape, branches: list[Node], params: ParameterStore, side: str) -> Node:
    hidden = None
    for b, x in enumerate(branches):
        term = tape.matmul(x, tape.param(params[f"Wa{b + 1}_{side}"]))
        hidden = term if hidden is None else tape.add(hidden, term)
    logits = tape.matmul(tape.tanh(hidden), tape.param(params[f"Was_{side}"]))
    return tape.softmax_rows(logits)


def score(eu: np.ndarray, ev: np.ndarray) -> float:
    eu, ev = np.ravel(eu), np.ravel(ev)
    if eu.shape != ev.shape:
        raise DimensionError(f"score: dims differ: {eu.shape} vs {ev.shape}")
    return float(eu @ ev)


# -- models -------------------------------------------------------------------------


def _pairwise_terms(tape: Tape, eu: Node, ei: Node, ej: Node) -> Node:
    gap = tape.sub(tape.row_sum(tape.mul(eu, ei)), tape.row_sum(tape.mul(eu, ej)))
    return tape.scale(tape.total(tape.log_sigmoid(gap)), -1.0)


class MultiGCCF:
    kind = "multigccf"

    def __init__(self, config: ModelConfig, graphs: GraphBundle, seed: int = 0, params: ParameterStore | None = None):
        config.validate()
        self.config = config
        self.graphs = graphs
        self.num_users = graphs.bipartite.num_users
        self.num_items = graphs.bipartite.num_items
        self.params = params if params is not None else self._init_params(np.random.default_rng(seed))
        self._inference_neighbors = None
        self._sampled_cache: dict = {}

    def _init_params(self, rng: np.random.Generator) -> ParameterStore:
        c = self.config
        store = ParameterStore()
        store.add("e_user", xavier_init(self.num_users, c.input_dim, rng))
        store.add("e_item", xavier_init(self.num_items, c.input_dim, rng))
        for s in SIDES:
            if c.use_bipar:
                dims = c.layer_dims
                for k in range(1, c.num_gcn_layers + 1):
                    store.add(f"Q_{s}_{k}", xavier_init(dims[k - 1], dims[k - 1], rng))
                    store.add(f"W_{s}_{k}", xavier_init(2 * dims[k - 1], dims[k], rng))
            if c.use_mge:
                store.add(f"M_{s}", xavier_init(c.input_dim, c.output_dim, rng))
            if c.use_skip:
                store.add(f"S_{s}", xavier_init(c.input_dim, c.output_dim, rng))
            if c.fusion == "attention":
                att = c.attention_dim or c.output_dim
                for b in range(len(c.branches)):
                    store.add(f"Wa{b + 1}_{s}", xavier_init(c.output_dim, att, rng))
                store.add(f"Was_{s}", xavier_init(att, len(c.branches), rng))
        return store

    def weight_params(self):
        for p in self.params:
            if not p.name.startswith("e_") or self.config.regularize_embedding_tables:
                yield p

    def encode(
        self, tape: Tape, targets: dict[str, np.ndarray], neighbors, training: bool = False, rng=None
    ) -> dict[str, Node]:
        """Fused embeddings for sorted unique ``targets[side]`` (rows in that order)."""
        c = self.config
        parts = {s: [] for s in SIDES}
        if c.use_bipar:
            h = bipar_gcn_encode(
                tape, self.params, c.num_gcn_layers, targets, neighbors, c.dropout_rate, rng, training
            )
            for s in SIDES:
                parts[s].append(h[s])
        for s in SIDES:
            if c.use_mge:
                parts[s].append(mge_encode(tape, self.params, s, targets[s], self.graphs.similarity(s).adj))
            if c.use_skip:
                parts[s].append(skip_encode(tape, self.params, s, targets[s]))
        return {s: fuse(tape, parts[s], c.fusion, self.params, s) for s in SIDES}

    def training_neighbors(self, set_index: int) -> SampledNeighbors:
        return SampledNeighbors(self.graphs, set_index, self.config.num_gcn_layers, self._sampled_cache)

    def loss(self, batch: np.ndarray, set_index: int = 0, training: bool = True, rng=None, tape: Tape | None = None) -> float:
        """BPR loss on ``(u, i, j)`` rows; fills parameter gradients."""
        c = self.config
        tape = Tape() if tape is None else tape
        batch = np.asarray(batch, dtype=np.int64)
        users = np.unique(batch[:, 0])
        items = np.unique(batch[:, 1:])
        fused = self.encode(tape, {"user": users, "item": items}, self.training_neighbors(set_index), training, rng)
        eu = tape.gather(fused["user"], np.searchsorted(users, batch[:, 0]))
        ei = tape.gather(fused["item"], np.searchsorted(items, batch[:, 1]))
        ej = tape.gather(fused["item"], np.searchsorted(items, batch[:, 2]))
        total = _pairwise_terms(tape, eu, ei, ej)
        if c.reg_lambda:
            reg = None
            for p in self.weight_params():
                term = tape.sum_squares(tape.param(p))
                reg = term if reg is None else tape.add(reg, term)
            if reg is not None:
                total = tape.add(total, tape.scale(reg, c.reg_lambda))
        if c.reg_beta:
            norms = tape.add(tape.add(tape.sum_squares(eu), tape.sum_squares(ei)), tape.sum_squares(ej))
            total = tape.add(total, tape.scale(norms, c.reg_beta))
        value = float(total.value[0, 0])
        if tape.record:
            tape.backward(total)
        return value

    def inference_neighbors(self):
        if self._inference_neighbors is None:
            if self.config.eval_neighbors == "full":
                self._inference_neighbors = FullNeighbors(self.graphs, self.config.max_eval_neighbors)
            else:
                self._inference_neighbors = UnionSampledNeighbors(self.graphs, self.config.num_gcn_layers)
        return self._inference_neighbors

    def embeddings(self) -> tuple[np.ndarray, np.ndarray]:
        """Fused embeddings of every user and item in inference mode."""
        tape = Tape(record=False)
        targets = {"user": np.arange(self.num_users), "item": np.arange(self.num_items)}
        out = self.encode(tape, targets, self.inference_neighbors(), training=False)
        return out["user"].value, out["item"].value

    def warm_start(self, bprmf: "BPRMF") -> "MultiGCCF":
        return warm_start_from_bprmf(self, bprmf)

    def meta(self) -> dict:
        return {"kind": self.kind, "config": self.config.to_dict(), "num_users": self.num_users, "num_items": self.num_items}


@dataclass
class BPRMFConfig:
    dim: int = 64
    reg_lambda: float = 0.01

    def to_dict(self) -> dict:
        return asdict(self)

    def ablation_flags(self) -> dict:
        return {}


class BPRMF:
    """Matrix factorization trained with the BPR pairwise loss."""

    kind = "bprmf"

    def __init__(self, config: BPRMFConfig, num_users: int, num_items: int, seed: int = 0, params=None):
        self.config = config
        self.num_users = num_users
        self.num_items = num_items
        if params is None:
            rng = np.random.default_rng(seed)
            params = ParameterStore()
            params.add("e_user", xavier_init(num_users, config.dim, rng))
            params.add("e_item", xavier_init(num_items, config.dim, rng))
        self.params = params

    def loss(self, batch: np.ndarray, set_index: int = 0, training: bool = True, rng=None, tape: Tape | None = None) -> float:
        tape = Tape() if tape is None else tape
        batch = np.asarray(batch, dtype=np.int64)
        eu_tab = tape.param(self.params["e_user"])
        ei_tab = tape.param(self.params["e_item"])
        eu = tape.gather(eu_tab, batch[:, 0])
        ei = tape.gather(ei_tab, batch[:, 1])
        ej = tape.gather(ei_tab, batch[:, 2])
        total = _pairwise_terms(tape, eu, ei, ej)
        if self.config.reg_lambda:
            reg = tape.add(tape.sum_squares(eu_tab), tape.sum_squares(ei_tab))
            total = tape.add(total, tape.scale(reg, self.config.reg_lambda))
        value = float(total.value[0, 0])
        if tape.record:
            tape.backward(total)
        return value

    def embeddings(self) -> tuple[np.ndarray, np.ndarray]:
        return self.params["e_user"].value.copy(), self.params["e_item"].value.copy()

    def meta(self) -> dict:
        return {"kind": self.kind, "config": self.config.to_dict(), "num_users": self.num_users, "num_items": self.num_items}


def bprmf_forward(u: int, i: int, j: int, e_user: np.ndarray, e_item: np.ndarray, reg_lambda: float = 0.0) -> float:
    """Scalar BPRMF loss for one triplet given raw embedding tables."""
    gap = e_user[u] @ e_item[i] - e_user[u] @ e_item[j]
    return float(np.logaddexp(0.0, -gap) + reg_lambda * (np.sum(e_user**2) + np.sum(e_item**2)))


def warm_start_from_bprmf(model: MultiGCCF, bprmf: BPRMF) -> MultiGCCF:
    """Copy BPRMF embeddings into the initial tables and freeze them."""
    for s in SIDES:
        src = bprmf.params[f"e_{s}"]
        dst = model.params[f"e_{s}"]
        if src.shape != dst.shape:
            raise ConfigError(f"BPRMF e_{s} has shape {src.shape}, model expects {dst.shape} (dim must equal input_dim)")
        dst.value[...] = src.value
        dst.adam_m.fill(0.0)
        dst.adam_v.fill(0.0)
        dst.zero_grad()
        dst.frozen = True
    return model


def save_model(model, path) -> str:
    return save_checkpoint(model.params, path, model.meta())


def load_model(path, graphs: GraphBundle | None = None):
    store, meta = load_checkpoint(path)
    if meta.get("kind") == BPRMF.kind:
        return BPRMF(BPRMFConfig(**meta["config"]), meta["num_users"], meta["num_items"], params=store)
    if graphs is None:
        raise ConfigError("a Multi-GCCF checkpoint needs its graph bundle to reload")
    config = ModelConfig.from_dict(meta["config"])
    if (graphs.bipartite.num_users, graphs.bipartite.num_items) != (meta["num_users"], meta["num_items"]):
        raise ConfigError("graph bundle does not match the checkpoint's user/item counts")
    return MultiGCCF(config, graphs, params=store)


def config_json(config) -> str:
    return json.dumps(config.to_dict(), sort_keys=True)
