"""Reverse-mode differentiation over dense float64 matrices.

A :class:`Tape` records every op applied to :class:`Node` values and replays
them backwards. All values are 2-D ``np.float64`` arrays; row vectors are
``(1, d)``. With ``Tape(record=False)`` ops only compute values, which is
the inference path.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
import scipy.sparse as sp


class DimensionError(ValueError):
    pass


class Node:
    __slots__ = ("value", "grad", "_param")

    def __init__(self, value: np.ndarray, param=None):
        self.value = value
        self.grad = None
        self._param = param

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape})"


def _accumulate(node: Node, g: np.ndarray) -> None:
    if node._param is not None and node._param.frozen:
        return
    if node.grad is None:
        node.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        node.grad += g


def _require_2d(*nodes: Node) -> None:
    for n in nodes:
        if n.value.ndim != 2:
            raise DimensionError(f"expected a 2-D matrix, got shape {n.value.shape}")


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    # log(sigmoid(x)) = -softplus(-x), stable for large |x|
    return -np.logaddexp(0.0, -x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Tape:
    """Records ops and their adjoint rules in execution order."""

    def __init__(self, record: bool = True):
        self.record = record
        self._ops: list[tuple[Node, Callable[[np.ndarray], None]]] = []

    def __len__(self):
        return len(self._ops)

    # -- leaves ---------------------------------------------------------

    def constant(self, value) -> Node:
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 1:
            value = value[None, :]
        return Node(value)

    def param(self, p) -> Node:
        """Leaf bound to a :class:`Parameter`; backward accumulates into ``p.grad``."""
        node = Node(p.value, param=p)
        if self.record and not p.frozen:
            node.grad = p.grad
        return node

    def _emit(self, value: np.ndarray, backward: Callable[[np.ndarray], None]) -> Node:
        out = Node(value)
        if self.record:
            self._ops.append((out, backward))
        return out

    # -- ops ------------------------------------------------------------

    def matmul(self, a: Node, b: Node) -> Node:
        _require_2d(a, b)
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
        av, bv = a.value, b.value

        def backward(g):
            if not (a._param is not None and a._param.frozen):
                _accumulate(a, g @ bv.T)
            if not (b._param is not None and b._param.frozen):
                _accumulate(b, av.T @ g)

        return self._emit(av @ bv, backward)

    def spmm(self, m: sp.csr_matrix, x: Node) -> Node:
        """Constant sparse matrix times a dense node."""
        _require_2d(x)
        if m.shape[1] != x.shape[0]:
            raise DimensionError(f"spmm: cannot multiply {m.shape} by {x.shape}")

        def backward(g):
            _accumulate(x, m.T @ g)

        return self._emit(np.asarray(m @ x.value), backward)

    def gather(self, x: Node, rows: np.ndarray) -> Node:
        """Select rows ``x[rows]``; repeated indices accumulate on the way back."""
        _require_2d(x)
        rows = np.asarray(rows, dtype=np.int64)
        n = x.shape[0]

        def backward(g):
            full = np.zeros_like(x.value)
            np.add.at(full, rows, g)
            _accumulate(x, full)

        if len(rows) and (rows.min() < 0 or rows.max() >= n):
            raise IndexError(f"gather: row index out of range for {n} rows")
        return self._emit(x.value[rows], backward)

    def take_cols(self, x: Node, lo: int, hi: int) -> Node:
        _require_2d(x)

        def backward(g):
            full = np.zeros_like(x.value)
            full[:, lo:hi] = g
            _accumulate(x, full)

        return self._emit(x.value[:, lo:hi].copy(), backward)

    def concat_cols(self, *xs: Node) -> Node:
        _require_2d(*xs)
        rows = {x.shape[0] for x in xs}
        if len(rows) != 1:
            raise DimensionError(f"concat_cols: row counts differ: {[x.shape for x in xs]}")
        widths = [x.shape[1] for x in xs]
        bounds = np.cumsum([0] + widths)

        def backward(g):
            for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
                _accumulate(x, g[:, lo:hi])

        return self._emit(np.concatenate([x.value for x in xs], axis=1), backward)

    def add(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise DimensionError(f"add: shapes differ: {a.shape} vs {b.shape}")

        def backward(g):
            _accumulate(a, g)
            _accumulate(b, g)

        return self._emit(a.value + b.value, backward)

    def sub(self, a: Node, b: Node) -> Node:
        if a.shape != b.shape:
            raise DimensionError(f"sub: shapes differ: {a.shape} vs {b.shape}")

        def backward(g):
            _accumulate(a, g)
            _accumulate(b, -g)

        return self._emit(a.value - b.value, backward)

    def mul(self, a: Node, b: Node) -> Node:
        """Element-wise product; ``b`` may be an ``(n, 1)`` column broadcast over ``a``."""
        if a.shape != b.shape and not (b.shape == (a.shape[0], 1)):
            raise DimensionError(f"mul: shapes incompatible: {a.shape} vs {b.shape}")
        av, bv = a.value, b.value

        def backward(g):
            _accumulate(a, g * bv)
            gb = g * av
            _accumulate(b, gb if gb.shape == bv.shape else gb.sum(axis=1, keepdims=True))

        return self._emit(av * bv, backward)

    def scale(self, a: Node, c: float) -> Node:
        def backward(g):
            _accumulate(a, c * g)

        return self._emit(c * a.value, backward)

    def row_sum(self, a: Node) -> Node:
        _require_2d(a)

        def backward(g):
            _accumulate(a, np.broadcast_to(g, a.shape))

        return self._emit(a.value.sum(axis=1, keepdims=True), backward)

    def row_mean(self, a: Node) -> Node:
        _require_2d(a)
        d = a.shape[1]

        def backward(g):
            _accumulate(a, np.broadcast_to(g / d, a.shape))

        return self._emit(a.value.mean(axis=1, keepdims=True), backward)

    def total(self, a: Node) -> Node:
        """Sum of every entry, as a ``(1, 1)`` node."""

        def backward(g):
            _accumulate(a, np.full(a.shape, g[0, 0]))

        return self._emit(np.array([[a.value.sum()]]), backward)

    def sum_squares(self, a: Node) -> Node:
        av = a.value

        def backward(g):
            _accumulate(a, 2.0 * g[0, 0] * av)

        return self._emit(np.array([[np.sum(av * av)]]), backward)

    def tanh(self, a: Node) -> Node:
        y = np.tanh(a.value)

        def backward(g):
            _accumulate(a, g * (1.0 - y * y))

        return self._emit(y, backward)

    def sigmoid(self, a: Node) -> Node:
        y = _sigmoid(a.value)

        def backward(g):
            _accumulate(a, g * y * (1.0 - y))

        return self._emit(y, backward)

    def log_sigmoid(self, a: Node) -> Node:
        x = a.value

        def backward(g):
            _accumulate(a, g * _sigmoid(-x))

        return self._emit(_log_sigmoid(x), backward)

    def softmax_rows(self, a: Node) -> Node:
        _require_2d(a)
        z = a.value - a.value.max(axis=1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=1, keepdims=True)

        def backward(g):
            _accumulate(a, y * (g - np.sum(g * y, axis=1, keepdims=True)))

        return self._emit(y, backward)

    def dropout(self, a: Node, rate: float, rng: np.random.Generator, training: bool) -> Node:
        """Inverted dropout; identity (same node) when not training or rate 0."""
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        if not training or rate == 0.0:
            return a
        mask = (rng.random(a.shape) >= rate) / (1.0 - rate)

        def backward(g):
            _accumulate(a, g * mask)

        return self._emit(a.value * mask, backward)

    # -- replay -----------------------------------------------------------

    def backward(self, out: Node) -> None:
        """Propagate d(out)/d(.) from a ``(1, 1)`` node through every recorded op."""
        if not self.record:
            raise RuntimeError("backward() on a non-recording tape")
        if out.value.shape != (1, 1):
            raise DimensionError(f"backward needs a scalar (1, 1) output, got {out.value.shape}")
        out.grad = np.ones((1, 1))
        for node, fn in reversed(self._ops):
            if node.grad is not None:
                fn(node.grad)
        self._ops.clear()
