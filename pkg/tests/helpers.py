import warnings

import numpy as np

from multigccf.dataset import from_pairs
from multigccf.graphs import build_graphs
from multigccf.numerics import Tape


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` wrt array ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor), elementwise."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def toy_bundle(num_users=3, num_items=4, sizes=(3, 2), num_sets=2, seed=0):
    """Small unsplit dataset plus graph bundle; every node has a train edge."""
    rng = np.random.default_rng(seed)
    m = rng.random((num_users, num_items)) < 0.5
    m[np.arange(num_users), np.arange(num_users) % num_items] = True
    m[np.arange(num_items) % num_users, np.arange(num_items)] = True
    ds = from_pairs(np.argwhere(m), num_users, num_items, ratios=None)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        graphs = build_graphs(ds, sizes=sizes, num_sets=num_sets, target_avg_degree=1, seed=seed)
    return ds, graphs


def model_grad_error(model, batch, set_index=0, dropout_seed=None) -> float:
    """Worst relative error of every trainable gradient of ``model.loss`` vs central differences."""

    def rng():
        return None if dropout_seed is None else np.random.default_rng(dropout_seed)

    training = dropout_seed is not None
    model.params.zero_grad()
    model.loss(batch, set_index=set_index, training=training, rng=rng())
    grads = {p.name: p.grad.copy() for p in model.params}

    def value():
        return model.loss(batch, set_index=set_index, training=training, rng=rng(), tape=Tape(record=False))

    worst = 0.0
    for p in model.params:
        if not p.frozen:
            worst = max(worst, max_rel_error(grads[p.name], central_diff(value, p.value)))
    model.params.zero_grad()
    return worst


def explicit_dataset(num_users, num_items, train=(), validation=(), test=()):
    """Dataset with hand-assigned splits (no filtering or splitting)."""
    from multigccf.dataset import InteractionDataset

    def arr(pairs):
        a = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
        return a[np.lexsort((a[:, 1], a[:, 0]))]

    return InteractionDataset(
        num_users, num_items, arr(train), arr(validation), arr(test),
        tuple(map(str, range(num_users))), tuple(map(str, range(num_items))),
    )
