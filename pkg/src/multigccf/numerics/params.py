"""Learnable parameters, Xavier initialization, Adam and checkpoints."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..bundle import read_bundle, write_bundle

CHECKPOINT_KIND = "checkpoint"


class NumericsError(FloatingPointError):
    pass


@dataclass(eq=False)
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = None
    adam_m: np.ndarray = None
    adam_v: np.ndarray = None
    step_count: int = 0
    frozen: bool = False

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        if self.value.ndim != 2:
            raise ValueError(f"parameter {self.name!r} must be 2-D, got shape {self.value.shape}")
        for attr in ("grad", "adam_m", "adam_v"):
            if getattr(self, attr) is None:
                setattr(self, attr, np.zeros_like(self.value))

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


def xavier_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform matrix: U(-b, b) with ``b = sqrt(6 / (rows + cols))``."""
    if rows < 1 or cols < 1:
        raise ValueError(f"xavier_init needs positive dims, got ({rows}, {cols})")
    bound = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def adam_step(
    param: Parameter, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
) -> Parameter:
    """One bias-corrected Adam update in place; zeroes the gradient afterwards."""
    if param.frozen:
        param.zero_grad()
        return param
    g = param.grad
    if not np.all(np.isfinite(g)):
        raise NumericsError(f"non-finite gradient in parameter {param.name!r}")
    param.step_count += 1
    t = param.step_count
    param.adam_m *= beta1
    param.adam_m += (1.0 - beta1) * g
    param.adam_v *= beta2
    param.adam_v += (1.0 - beta2) * (g * g)
    m_hat = param.adam_m / (1.0 - beta1**t)
    v_hat = param.adam_v / (1.0 - beta2**t)
    param.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
    param.zero_grad()
    return param


def neighborhood_dropout(h: np.ndarray, rate: float, rng: np.random.Generator, training: bool) -> np.ndarray:
    """Array version of inverted dropout (the tape op is ``Tape.dropout``)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return h
    return h * ((rng.random(h.shape) >= rate) / (1.0 - rate))


@dataclass
class ParameterStore:
    """Ordered collection of named parameters."""

    params: dict[str, Parameter] = field(default_factory=dict)

    def add(self, name: str, value: np.ndarray) -> Parameter:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        p = Parameter(name, value)
        self.params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params.values())

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self) -> None:
        for p in self:
            p.zero_grad()

    def step(self, lr: float, **adam_kwargs) -> None:
        for p in self:
            adam_step(p, lr, **adam_kwargs)

    def check_finite(self) -> None:
        for p in self:
            if not np.all(np.isfinite(p.value)):
                raise NumericsError(f"non-finite value in parameter {p.name!r}")

    def snapshot(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self}

    def restore(self, values: dict[str, np.ndarray]) -> None:
        for name, v in values.items():
            self.params[name].value[...] = v

    def num_values(self) -> int:
        return sum(p.value.size for p in self)


def save_checkpoint(store: ParameterStore, path, meta: dict | None = None) -> str:
    """Write values, Adam moments, step counts and freeze flags; returns sha256."""
    arrays = {}
    entries = []
    for p in store:
        arrays[f"{p.name}/value"] = p.value
        arrays[f"{p.name}/adam_m"] = p.adam_m
        arrays[f"{p.name}/adam_v"] = p.adam_v
        entries.append({"name": p.name, "step_count": p.step_count, "frozen": p.frozen})
    return write_bundle(path, CHECKPOINT_KIND, {"params": entries, "model": meta or {}}, arrays)


def load_checkpoint(path) -> tuple[ParameterStore, dict]:
    meta, arrays = read_bundle(path, CHECKPOINT_KIND)
    store = ParameterStore()
    for e in meta["params"]:
        name = e["name"]
        p = store.add(name, arrays[f"{name}/value"])
        p.adam_m[...] = arrays[f"{name}/adam_m"]
        p.adam_v[...] = arrays[f"{name}/adam_v"]
        p.step_count = e["step_count"]
        p.frozen = e["frozen"]
    return store, meta["model"]
