"""Masked next-item cross-entropy training with Adam."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor

log = logging.getLogger(__name__)

PAD_ID = 0


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 20
    patience: int = 5
    seed: int = 0
    eval_n: int = 5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0 or self.eps <= 0:
            raise ValueError("learning_rate must be >= 0 and eps > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("adam betas must lie in [0, 1)")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be >= 1")


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mrr5: float
    val_hr5: float
    val_ndcg5: float
    wall_seconds: float


@dataclass
class TrainResult:
    model: object
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0


def masked_xent(logits, targets, pad_id: int = PAD_ID) -> Tensor:
    """Mean of -log softmax(logits)[target] over non-padding targets.

    ``targets`` holds item ids (1..I); logits column j scores id j + 1.
    """
    targets = np.asarray(targets)
    mask = targets != pad_id
    if not mask.any():
        raise ValueError("masked_xent: all targets are padding")
    return ad.cross_entropy(logits, np.where(mask, targets - 1, 0), mask)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState, config: TrainConfig):
    """Bias-corrected Adam update, applied in place; returns (params, state)."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingDiverged(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    b1, b2, lr, eps = config.beta1, config.beta2, config.learning_rate, config.eps
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ad.ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def compute_gradients(model, batch) -> tuple:
    """(loss value, name -> gradient) for one batch."""
    tape = Tape()
    bound = model.bind(tape)
    loss, _ = model.loss(batch, tape, bound)
    grads = ad.backward(loss, list(bound.values()))
    return float(loss.value), {name: grads[t] for name, t in bound.items()}


def train_epoch(model, data: np.ndarray, config: TrainConfig, state: AdamState, rng: np.random.Generator) -> float:
    """One shuffled pass; returns the mean batch loss."""
    order = rng.permutation(len(data))
    losses = []
    for start in range(0, len(order), config.batch_size):
        batch = data[order[start : start + config.batch_size]]
        try:
            loss, grads = compute_gradients(model, batch)
        except ad.NonFiniteError as exc:
            raise TrainingDiverged(f"non-finite value in batch starting at {start}: {exc}") from exc
        if not np.isfinite(loss):
            raise TrainingDiverged(f"loss is {loss} in batch starting at {start}")
        adam_step(model.params, grads, state, config)
        losses.append(loss)
    return float(np.mean(losses))


def train(model, train_data, valid_data, config: TrainConfig, history_path=None, on_epoch=None) -> TrainResult:
    """Train with early stopping on validation NDCG; returns the best-validation model.

    ``on_epoch(epoch, model, record)`` is called after every epoch with the
    live (not best) model.
    """
    from .data import as_array
    from .evaluation import evaluate

    train_arr = as_array(train_data)
    valid_arr = as_array(valid_data)
    if len(train_arr) == 0 or len(valid_arr) == 0:
        raise ValueError("train and validation splits must be nonempty")
    rng = np.random.default_rng(config.seed)
    state = AdamState.zeros_like(model.params)
    result = TrainResult(model=model.copy())
    best, stale = -np.inf, 0
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        loss = train_epoch(model, train_arr, config, state, rng)
        wall = time.perf_counter() - t0
        report = evaluate(model, valid_arr, config.eval_n)
        rec = EpochRecord(epoch, loss, report.mrr, report.hr, report.ndcg, wall)
        result.history.append(rec)
        if on_epoch is not None:
            on_epoch(epoch, model, rec)
        log.info("epoch %d loss %.4f val ndcg@%d %.4f (%.2fs)", epoch, loss, config.eval_n, report.ndcg, wall)
        if report.ndcg > best:
            best, stale = report.ndcg, 0
            result.model = model.copy()
            result.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.patience:
                log.info("early stop after epoch %d (best %d)", epoch, result.best_epoch)
                break
    if history_path is not None:
        write_history(history_path, result.history)
    return result


HISTORY_FIELDS = ["epoch", "train_loss", "val_mrr5", "val_hr5", "val_ndcg5", "wall_seconds"]


def write_history(path, history: List[EpochRecord]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for rec in history:
            writer.writerow(asdict(rec))
    return path
