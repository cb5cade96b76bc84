"""Implicit-feedback interaction data: ingestion, k-core filtering, splitting
and BPR triplet sampling."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .bundle import read_bundle, write_bundle

logger = logging.getLogger(__name__)

SNAPSHOT_KIND = "dataset-snapshot"


class DatasetError(ValueError):
    pass


class ParseError(DatasetError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


class EmptyDatasetError(DatasetError):
    pass


class SplitConstraintError(DatasetError):
    pass


class SamplingError(DatasetError):
    pass


_SEPARATORS = {"whitespace": None, "comma": ","}


def load_interactions(path, format: str = "auto") -> list[tuple[str, str]]:
    """Read ``user item [rating [timestamp]]`` records and collapse duplicates.

    ``format`` is ``"whitespace"``, ``"comma"`` or ``"auto"`` (comma if the
    line contains one). Extra columns are accepted and discarded. Order of
    first appearance is kept.
    """
    if format not in ("auto", *_SEPARATORS):
        raise ValueError(f"unknown dataset format {format!r}")
    seen: set[tuple[str, str]] = set()
    pairs: list[tuple[str, str]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if format == "auto":
                fields = [f.strip() for f in line.split(",")] if "," in line else line.split()
            elif format == "comma":
                fields = [f.strip() for f in line.split(",")]
            else:
                fields = line.split()
            if len(fields) < 2 or not fields[0] or not fields[1]:
                raise ParseError(path, lineno, f"expected at least user and item columns, got {line!r}")
            pair = (fields[0], fields[1])
            if pair not in seen:
                seen.add(pair)
                pairs.append(pair)
    if not pairs:
        raise EmptyDatasetError(f"{path}: no interactions found")
    return pairs


@dataclass(frozen=True)
class InteractionDataset:
    """Interactions with contiguous ids and train/validation/test membership.

    Each split is an ``(n, 2)`` int64 array of ``(user, item)`` rows sorted
    lexicographically. ``user_ids[k]`` / ``item_ids[k]`` give the raw id of
    index ``k``.
    """

    num_users: int
    num_items: int
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_interactions(self) -> int:
        return len(self.train) + len(self.validation) + len(self.test)

    @property
    def density(self) -> float:
        return self.num_interactions / (self.num_users * self.num_items)

    def user_index(self, raw_id: str) -> int:
        if "user_index" not in self._cache:
            self._cache["user_index"] = {r: k for k, r in enumerate(self.user_ids)}
        return self._cache["user_index"][raw_id]

    def item_index(self, raw_id: str) -> int:
        if "item_index" not in self._cache:
            self._cache["item_index"] = {r: k for k, r in enumerate(self.item_ids)}
        return self._cache["item_index"][raw_id]

    def split_pairs(self, name: str) -> np.ndarray:
        return {"train": self.train, "validation": self.validation, "test": self.test}[name]

    def matrix(self, *splits: str) -> sp.csr_matrix:
        """Binary user x item CSR matrix over the union of the named splits."""
        key = ("matrix", splits)
        if key not in self._cache:
            pairs = np.concatenate([self.split_pairs(s) for s in splits]) if splits else np.empty((0, 2), np.int64)
            m = sp.csr_matrix(
                (np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(self.num_users, self.num_items)
            )
            m.sum_duplicates()
            m.sort_indices()
            self._cache[key] = m
        return self._cache[key]

    def observed_keys(self, *splits: str) -> np.ndarray:
        """Sorted ``user * num_items + item`` keys of the named splits (default: all)."""
        splits = splits or ("train", "validation", "test")
        key = ("observed", splits)
        if key not in self._cache:
            pairs = np.concatenate([self.split_pairs(s) for s in splits])
            self._cache[key] = np.sort(pairs[:, 0] * self.num_items + pairs[:, 1])
        return self._cache[key]

    def summary(self) -> dict:
        return {
            "users": self.num_users,
            "items": self.num_items,
            "interactions": self.num_interactions,
            "train": len(self.train),
            "validation": len(self.validation),
            "test": len(self.test),
            "density": self.density,
            "density_percent": f"{100 * self.density:.3f}%",
        }


def _sorted_pairs(pairs) -> np.ndarray:
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    order = np.lexsort((arr[:, 1], arr[:, 0]))
    return arr[order]


def filter_and_index(raw: list[tuple[str, str]], min_interactions: int = 10) -> InteractionDataset:
    """Drop users/items with fewer than ``min_interactions`` interactions,
    repeating until nothing changes, then map survivors to contiguous ids.

    Everything lands in ``train``; use :func:`split` afterwards.
    """
    if min_interactions < 1:
        raise ValueError("min_interactions must be >= 1")
    pairs = list(dict.fromkeys(raw))
    while True:
        ucount: dict[str, int] = {}
        icount: dict[str, int] = {}
        for u, i in pairs:
            ucount[u] = ucount.get(u, 0) + 1
            icount[i] = icount.get(i, 0) + 1
        kept = [(u, i) for u, i in pairs if ucount[u] >= min_interactions and icount[i] >= min_interactions]
        if len(kept) == len(pairs):
            break
        pairs = kept
    if not pairs:
        raise EmptyDatasetError(f"no interactions survive filtering at min_interactions={min_interactions}")

    user_ids = tuple(dict.fromkeys(u for u, _ in pairs))
    item_ids = tuple(dict.fromkeys(i for _, i in pairs))
    umap = {u: k for k, u in enumerate(user_ids)}
    imap = {i: k for k, i in enumerate(item_ids)}
    indexed = _sorted_pairs([(umap[u], imap[i]) for u, i in pairs])
    empty = np.empty((0, 2), dtype=np.int64)
    return InteractionDataset(len(user_ids), len(item_ids), indexed, empty, empty.copy(), user_ids, item_ids)


def _split_counts(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    n_val = max(1, int(math.floor(n * ratios[1] + 0.5)))
    n_test = max(1, int(math.floor(n * ratios[2] + 0.5)))
    n_train = n - n_val - n_test
    if n_train < 1:
        n_train = 1
        n_test = n - n_train - n_val
    return n_train, n_val, n_test


def split(
    dataset: InteractionDataset, ratios=(0.8, 0.1, 0.1), seed: int = 0
) -> InteractionDataset:
    """Per-user random train/validation/test split.

    Every item keeps at least one train interaction: a held-out interaction
    of a train-less item is swapped with one of the same user's train
    interactions whose item can spare it.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    pairs = np.concatenate([dataset.train, dataset.validation, dataset.test])
    pairs = _sorted_pairs(pairs)
    rng = np.random.default_rng(seed)

    users = pairs[:, 0]
    starts = np.searchsorted(users, np.arange(dataset.num_users))
    ends = np.searchsorted(users, np.arange(dataset.num_users), side="right")
    # 0 = train, 1 = validation, 2 = test
    label = np.zeros(len(pairs), dtype=np.int64)
    for u in range(dataset.num_users):
        lo, hi = starts[u], ends[u]
        n = hi - lo
        if n < 3:
            raise SplitConstraintError(f"user {dataset.user_ids[u]!r} has {n} interactions; need >= 3 to split")
        n_train, n_val, _ = _split_counts(n, ratios)
        perm = lo + rng.permutation(n)
        label[perm[n_train : n_train + n_val]] = 1
        label[perm[n_train + n_val :]] = 2

    items = pairs[:, 1]
    train_count = np.bincount(items[label == 0], minlength=dataset.num_items)
    for v in np.flatnonzero(train_count == 0):
        held = np.flatnonzero((items == v) & (label != 0))
        row = held[0]
        u = users[row]
        lo, hi = starts[u], ends[u]
        candidates = [r for r in range(lo, hi) if label[r] == 0 and train_count[items[r]] >= 2]
        if candidates:
            donor = candidates[int(rng.integers(len(candidates)))]
            label[donor] = label[row]
            train_count[items[donor]] -= 1
        label[row] = 0
        train_count[v] += 1

    return InteractionDataset(
        dataset.num_users,
        dataset.num_items,
        pairs[label == 0],
        pairs[label == 1],
        pairs[label == 2],
        dataset.user_ids,
        dataset.item_ids,
    )


def sample_triplets(
    dataset: InteractionDataset, batch_size: int, rng: np.random.Generator, exclude=("train",)
) -> np.ndarray:
    """Draw ``batch_size`` BPR triplets as an ``(n, 3)`` array of (u, i, j).

    (u, i) is uniform over train interactions; j is uniform over items the
    user has no interaction with in the ``exclude`` splits (rejection
    sampling). Excluding held-out splits as well leaks their membership into
    training, so the default only excludes ``train``.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    exclude = tuple(exclude)
    n_items = dataset.num_items
    observed = dataset.observed_keys(*exclude)
    key = ("eligible", exclude)
    if key not in dataset._cache:
        per_user = np.bincount(observed // n_items, minlength=dataset.num_users)
        saturated = per_user >= n_items
        if saturated.any():
            logger.warning("%d users interacted with every item; skipped for sampling", int(saturated.sum()))
        rows = np.flatnonzero(~saturated[dataset.train[:, 0]])
        if len(rows) == 0:
            raise SamplingError("no user has an unobserved item to use as a negative")
        dataset._cache[key] = rows
    eligible = dataset._cache[key]

    picks = eligible[rng.integers(0, len(eligible), size=batch_size)]
    u = dataset.train[picks, 0]
    i = dataset.train[picks, 1]
    j = rng.integers(0, n_items, size=batch_size)
    bad = np.flatnonzero(_is_member(observed, u * n_items + j))
    while len(bad):
        j[bad] = rng.integers(0, n_items, size=len(bad))
        bad = bad[_is_member(observed, u[bad] * n_items + j[bad])]
    return np.stack([u, i, j], axis=1)


def _is_member(sorted_keys: np.ndarray, keys: np.ndarray) -> np.ndarray:
    pos = np.searchsorted(sorted_keys, keys)
    pos = np.minimum(pos, len(sorted_keys) - 1)
    return sorted_keys[pos] == keys


def prepare(path, min_interactions=10, ratios=(0.8, 0.1, 0.1), seed=0, format="auto") -> InteractionDataset:
    return split(filter_and_index(load_interactions(path, format), min_interactions), ratios, seed)


def save_snapshot(dataset: InteractionDataset, path, extra_meta: dict | None = None) -> str:
    meta = {
        "num_users": dataset.num_users,
        "num_items": dataset.num_items,
        "user_ids": list(dataset.user_ids),
        "item_ids": list(dataset.item_ids),
    }
    if extra_meta:
        meta["extra"] = extra_meta
    arrays = {"train": dataset.train, "validation": dataset.validation, "test": dataset.test}
    return write_bundle(path, SNAPSHOT_KIND, meta, arrays)


def load_snapshot(path) -> InteractionDataset:
    meta, arrays = read_bundle(path, SNAPSHOT_KIND)
    return InteractionDataset(
        meta["num_users"],
        meta["num_items"],
        arrays["train"].reshape(-1, 2),
        arrays["validation"].reshape(-1, 2),
        arrays["test"].reshape(-1, 2),
        tuple(meta["user_ids"]),
        tuple(meta["item_ids"]),
    )


def from_pairs(pairs, num_users=None, num_items=None, ratios=(0.8, 0.1, 0.1), seed=0) -> InteractionDataset:
    """Build and split a dataset from already-indexed ``(user, item)`` pairs."""
    arr = _sorted_pairs(pairs)
    arr = np.unique(arr, axis=0)
    nu = int(num_users if num_users is not None else arr[:, 0].max() + 1)
    ni = int(num_items if num_items is not None else arr[:, 1].max() + 1)
    empty = np.empty((0, 2), dtype=np.int64)
    base = InteractionDataset(nu, ni, arr, empty, empty.copy(), tuple(map(str, range(nu))), tuple(map(str, range(ni))))
    if ratios is None:
        return base
    return split(base, ratios, seed)

