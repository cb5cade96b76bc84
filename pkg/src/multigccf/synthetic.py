"""Planted-block interaction data for experiments and tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import InteractionDataset, filter_and_index, split


@dataclass(frozen=True)
class BlockData:
    dataset: InteractionDataset
    user_block: np.ndarray
    item_block: np.ndarray


def block_interactions(num_users=200, num_items=300, num_blocks=5, p_in=0.3, p_out=0.01, seed=0):
    """Raw ``("u<k>", "i<k>")`` pairs plus the planted block of every raw user and item.

    Users and items are split into ``num_blocks`` contiguous groups; a pair
    interacts with probability ``p_in`` inside a block, ``p_out`` across.
    """
    rng = np.random.default_rng(seed)
    ub = np.arange(num_users) * num_blocks // num_users
    ib = np.arange(num_items) * num_blocks // num_items
    prob = np.where(ub[:, None] == ib[None, :], p_in, p_out)
    u, i = np.nonzero(rng.random((num_users, num_items)) < prob)
    pairs = [(f"u{a}", f"i{b}") for a, b in zip(u.tolist(), i.tolist())]
    return pairs, ub, ib


def block_dataset(
    num_users=200, num_items=300, num_blocks=5, p_in=0.3, p_out=0.01, seed=0, min_interactions=3, ratios=(0.8, 0.1, 0.1)
) -> BlockData:
    pairs, ub, ib = block_interactions(num_users, num_items, num_blocks, p_in, p_out, seed)
    ds = split(filter_and_index(pairs, min_interactions), ratios, seed)
    user_block = np.array([ub[int(r[1:])] for r in ds.user_ids])
    item_block = np.array([ib[int(r[1:])] for r in ds.item_ids])
    return BlockData(ds, user_block, item_block)
