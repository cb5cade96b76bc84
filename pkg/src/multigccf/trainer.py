"""Epoch loop: triplet batches, Adam steps, pre-sampled set rotation and
early stopping on validation Recall@20."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .dataset import InteractionDataset, sample_triplets
from .evaluation import evaluate, evaluate_embeddings
from .model import BPRMF, ConfigError, MultiGCCF, save_model, warm_start_from_bprmf
from .numerics import NumericsError

logger = logging.getLogger(__name__)

LOG_HEADER = "epoch,mean_loss,val_recall@20,val_ndcg@20,seconds"


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 1024
    max_epochs: int = 400
    early_stop_patience: int = 5
    seed: int = 0
    num_presample_sets: int = 30
    eval_every: int = 1
    validation_users: int = 2000
    validation_k: int = 20
    # check every parameter for NaN/Inf after each step instead of each epoch
    debug: bool = False
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # splits whose items may not be drawn as negatives
    negatives_exclude: tuple[str, ...] = ("train",)

    def __post_init__(self):
        self.negatives_exclude = tuple(self.negatives_exclude)
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["negatives_exclude"] = list(self.negatives_exclude)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainState:
    epoch: int = 0
    best_validation_recall: float = -math.inf
    best_epoch: int = 0
    epochs_since_improvement: int = 0
    num_evaluations: int = 0
    loss_history: list[float] = field(default_factory=list)
    validation_history: list[tuple[int, float, float]] = field(default_factory=list)
    stopped_early: bool = False


def _validation_users(dataset: InteractionDataset, limit: int, rng: np.random.Generator) -> np.ndarray:
    users = np.unique(dataset.validation[:, 0])
    if len(users) > limit:
        users = np.sort(rng.choice(users, size=limit, replace=False))
    return users


def train(
    dataset: InteractionDataset,
    model,
    config: TrainConfig,
    log=None,
    checkpoint_path=None,
    cutoffs=(20,),
    log_timing: bool = True,
):
    """Train ``model`` in place and return ``(model, state, test_report)``.

    The returned model carries the parameters of the epoch with the best
    validation Recall@k. ``log`` receives one CSV line per epoch.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    sample_rng = np.random.default_rng(seeds[0])
    dropout_rng = np.random.default_rng(seeds[1])
    val_users = _validation_users(dataset, config.validation_users, np.random.default_rng(seeds[2]))
    state = TrainState()
    n_train = len(dataset.train)
    n_batches = math.ceil(n_train / config.batch_size)
    adam = dict(beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps)
    best = model.params.snapshot()
    num_sets = getattr(getattr(model, "graphs", None), "table", None)
    num_sets = num_sets.num_sets if num_sets is not None else config.num_presample_sets

    if log is not None:
        print(LOG_HEADER, file=log, flush=True)

    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        set_index = (epoch - 1) % num_sets
        total = 0.0
        remaining = n_train
        for b in range(n_batches):
            size = min(config.batch_size, remaining)
            remaining -= size
            batch = sample_triplets(dataset, size, sample_rng, config.negatives_exclude)
            loss = model.loss(batch, set_index=set_index, training=True, rng=dropout_rng)
            if not math.isfinite(loss):
                bad = _first_nonfinite(model)
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}" + (f" ({bad})" if bad else ""))
            total += loss
            try:
                model.params.step(config.learning_rate, **adam)
                if config.debug:
                    model.params.check_finite()
            except NumericsError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from exc
        try:
            model.params.check_finite()
        except NumericsError as exc:
            raise TrainingError(f"epoch {epoch}: {exc}") from exc
        state.epoch = epoch
        mean_loss = total / max(n_train, 1)
        state.loss_history.append(mean_loss)

        val_recall = val_ndcg = float("nan")
        if epoch % config.eval_every == 0:
            user_emb, item_emb = model.embeddings()
            rep = evaluate_embeddings(
                user_emb, item_emb, dataset, (config.validation_k,), "validation", users=val_users
            )
            val_recall, val_ndcg = rep.recall[config.validation_k], rep.ndcg[config.validation_k]
            state.num_evaluations += 1
            state.validation_history.append((epoch, val_recall, val_ndcg))
            if val_recall > state.best_validation_recall:
                state.best_validation_recall = val_recall
                state.best_epoch = epoch
                state.epochs_since_improvement = 0
                best = model.params.snapshot()
                if checkpoint_path is not None:
                    save_model(model, checkpoint_path)
            else:
                state.epochs_since_improvement += 1
        seconds = time.perf_counter() - t0
        if log is not None:
            line = f"{epoch},{mean_loss:.10g},{val_recall:.10g},{val_ndcg:.10g}"
            print(line + (f",{seconds:.3f}" if log_timing else ","), file=log, flush=True)
        logger.info("epoch %d loss %.5f val recall %.4f", epoch, mean_loss, val_recall)
        if state.epochs_since_improvement >= config.early_stop_patience:
            state.stopped_early = True
            break

    model.params.restore(best)
    if checkpoint_path is not None and state.num_evaluations == 0:
        save_model(model, checkpoint_path)
    report = evaluate(model, dataset, cutoffs, "test", label=getattr(model, "kind", ""))
    return model, state, report


def _first_nonfinite(model) -> str | None:
    # a bad value poisons every gradient downstream, so look at values first
    for p in model.params:
        if not np.all(np.isfinite(p.value)):
            return f"parameter {p.name!r} is non-finite"
    for p in model.params:
        if not np.all(np.isfinite(p.grad)):
            return f"gradient of {p.name!r} is non-finite"
    return None


def build_model(model_config, graphs, seed: int = 0) -> MultiGCCF:
    return MultiGCCF(model_config, graphs, seed=seed)


def pretrain_and_warm_start(dataset, graphs, model_config, bprmf_train_config: TrainConfig, seed: int = 0, log=None):
    """Train BPRMF at ``input_dim`` and use its embeddings as frozen inputs of a new model."""
    from .model import BPRMFConfig

    bprmf = BPRMF(BPRMFConfig(dim=model_config.input_dim, reg_lambda=model_config.reg_lambda), dataset.num_users, dataset.num_items, seed=seed)
    bprmf, _, _ = train(dataset, bprmf, bprmf_train_config, log=log)
    return warm_start_from_bprmf(MultiGCCF(model_config, graphs, seed=seed), bprmf), bprmf
