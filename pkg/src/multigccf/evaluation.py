"""Full-ranking top-k evaluation with Recall@k and NDCG@k."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import InteractionDataset

SPLITS = ("train", "validation", "test")


@dataclass
class RankingResult:
    user: int
    ranked_items: np.ndarray
    relevant: frozenset


def rank_items(scores, mask=(), k: int = 20, user: int = -1, relevant=()) -> RankingResult:
    """Top-``k`` unmasked items by descending score, ties broken by lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.asarray(list(mask) if not isinstance(mask, np.ndarray) else mask, dtype=np.int64)
    keyed = -scores.copy()
    keyed[mask] = np.inf
    order = np.argsort(keyed, kind="stable")
    eligible = len(scores) - len(np.unique(mask))
    return RankingResult(user, order[: min(k, eligible)], frozenset(int(i) for i in relevant))


def recall_at_k(result: RankingResult, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    if not result.relevant:
        return 0.0
    hits = sum(1 for i in result.ranked_items[:k] if int(i) in result.relevant)
    return hits / len(result.relevant)


def _idcg(n: int) -> float:
    return sum(1.0 / math.log2(r + 1) for r in range(1, n + 1))


def ndcg_at_k(result: RankingResult, k: int) -> float:
    """Binary-relevance NDCG; the ideal list puts min(k, |relevant|) hits first."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not result.relevant:
        return 0.0
    dcg = sum(1.0 / math.log2(r + 2) for r, i in enumerate(result.ranked_items[:k]) if int(i) in result.relevant)
    return dcg / _idcg(min(k, len(result.relevant)))


@dataclass
class EvalReport:
    cutoffs: list[int]
    recall: dict[int, float]
    ndcg: dict[int, float]
    num_users: int
    num_skipped: int
    split: str = "test"
    config: dict = field(default_factory=dict)
    ablation: dict = field(default_factory=dict)
    label: str = ""
    per_user: dict | None = None

    def to_dict(self) -> dict:
        d = {
            "label": self.label,
            "split": self.split,
            "cutoffs": list(self.cutoffs),
            "recall": {str(k): v for k, v in self.recall.items()},
            "ndcg": {str(k): v for k, v in self.ndcg.items()},
            "num_users": self.num_users,
            "num_skipped": self.num_skipped,
            "config": self.config,
            "ablation": self.ablation,
        }
        if self.per_user is not None:
            d["per_user"] = {name: [float(x) for x in vals] for name, vals in self.per_user.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_row(self) -> dict:
        row = {"label": self.label, "split": self.split, "users": self.num_users}
        for k in self.cutoffs:
            row[f"recall@{k}"] = f"{self.recall[k]:.6f}"
            row[f"ndcg@{k}"] = f"{self.ndcg[k]:.6f}"
        return row

    def to_csv(self) -> str:
        buf = io.StringIO()
        row = self.csv_row()
        w = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        w.writeheader()
        w.writerow(row)
        return buf.getvalue()


def _user_sets(pairs: np.ndarray, num_users: int) -> list[np.ndarray]:
    order = np.argsort(pairs[:, 0], kind="stable")
    pairs = pairs[order]
    bounds = np.searchsorted(pairs[:, 0], np.arange(num_users + 1))
    return [pairs[bounds[u] : bounds[u + 1], 1] for u in range(num_users)]


def evaluate_embeddings(
    user_emb: np.ndarray,
    item_emb: np.ndarray,
    dataset: InteractionDataset,
    cutoffs=(20,),
    split: str = "test",
    users=None,
    threads: int = 1,
    chunk: int = 256,
    keep_per_user: bool = False,
) -> EvalReport:
    """Rank every non-masked item for each user and average the metrics.

    Items the user has in any other split are masked. Users with no items in
    ``split`` are skipped and counted.
    """
    cutoffs = sorted(int(k) for k in cutoffs)
    if min(cutoffs) < 1:
        raise ValueError("cutoffs must be >= 1")
    target = _user_sets(dataset.split_pairs(split), dataset.num_users)
    masks = [_user_sets(dataset.split_pairs(s), dataset.num_users) for s in SPLITS if s != split]
    users = np.arange(dataset.num_users) if users is None else np.asarray(users, dtype=np.int64)
    active = np.array([u for u in users if len(target[u])], dtype=np.int64)
    skipped = len(users) - len(active)
    kmax = max(cutoffs)

    def run(block: np.ndarray):
        scores = user_emb[block] @ item_emb.T
        out = []
        for row, u in zip(scores, block):
            mask = np.concatenate([m[u] for m in masks])
            res = rank_items(row, mask, kmax, int(u), target[u])
            out.append([recall_at_k(res, k) for k in cutoffs] + [ndcg_at_k(res, k) for k in cutoffs])
        return out

    blocks = [active[i : i + chunk] for i in range(0, len(active), chunk)]
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, blocks))
    else:
        results = [run(b) for b in blocks]
    values = np.array([r for block in results for r in block]).reshape(len(active), 2 * len(cutoffs))

    n = len(cutoffs)
    means = values.mean(axis=0) if len(active) else np.zeros(2 * n)
    report = EvalReport(
        cutoffs,
        {k: float(means[c]) for c, k in enumerate(cutoffs)},
        {k: float(means[n + c]) for c, k in enumerate(cutoffs)},
        len(active),
        skipped,
        split,
    )
    if keep_per_user:
        report.per_user = {"user": active.tolist()}
        for c, k in enumerate(cutoffs):
            report.per_user[f"recall@{k}"] = values[:, c].tolist()
            report.per_user[f"ndcg@{k}"] = values[:, n + c].tolist()
    return report


def evaluate(model, dataset: InteractionDataset, cutoffs=(20,), split: str = "test", users=None, threads: int = 1, label: str = "", keep_per_user: bool = False) -> EvalReport:
    user_emb, item_emb = model.embeddings()
    report = evaluate_embeddings(user_emb, item_emb, dataset, cutoffs, split, users, threads, keep_per_user=keep_per_user)
    report.config = model.config.to_dict()
    report.ablation = model.config.ablation_flags()
    report.label = label
    return report


def export_embeddings(model, path, side: str = "item") -> int:
    """Write fused embeddings as ``index<TAB>v1,...,vd`` lines; returns row count."""
    user_emb, item_emb = model.embeddings()
    emb = user_emb if side == "user" else item_emb
    with open(path, "w", encoding="utf-8") as fh:
        for idx, row in enumerate(emb):
            fh.write(f"{idx}\t" + ",".join(repr(float(x)) for x in row) + "\n")
    return len(emb)
