"""Multi-graph convolution collaborative filtering on numpy."""

from .dataset import (
    InteractionDataset,
    filter_and_index,
    load_interactions,
    load_snapshot,
    sample_triplets,
    save_snapshot,
    split,
)
from .evaluation import EvalReport, evaluate, ndcg_at_k, rank_items, recall_at_k
from .graphs import GraphBundle, build_bipartite, build_graphs, build_similarity_graph, presample
from .model import BPRMF, BPRMFConfig, ModelConfig, MultiGCCF, warm_start_from_bprmf
from .trainer import TrainConfig, TrainState, train

__version__ = "0.1.0"

__all__ = [
    "BPRMF",
    "BPRMFConfig",
    "EvalReport",
    "GraphBundle",
    "InteractionDataset",
    "ModelConfig",
    "MultiGCCF",
    "TrainConfig",
    "TrainState",
    "build_bipartite",
    "build_graphs",
    "build_similarity_graph",
    "evaluate",
    "filter_and_index",
    "load_interactions",
    "load_snapshot",
    "ndcg_at_k",
    "presample",
    "rank_items",
    "recall_at_k",
    "sample_triplets",
    "save_snapshot",
    "split",
    "train",
    "warm_start_from_bprmf",
]
