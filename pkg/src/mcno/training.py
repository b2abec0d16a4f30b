"""Adam training loop with step-halving learning rate."""
from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .model import MCNOModel, data_scales, forward, forward_at_resolution
from .rng import Rng, derive
from .spectral import Dataset

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, msg, epoch=None, batch=None):
        super().__init__(msg)
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 20
    base_lr: float = 1e-3
    halving_period: int = 100
    seed: int = 0
    checkpoint_every: int = 100
    normalize: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.halving_period < 1:
            raise ValueError("halving_period must be >= 1")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")


def lr_at(epoch: int, base: float = 1e-3, period: int = 100) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base * 2.0 ** -(epoch // period)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_direction(g, m, v, step, beta1=0.9, beta2=0.999, eps=1e-8):
    """Moment updates and the bias-corrected direction ``m_hat / (sqrt(v_hat) + eps)``."""
    m = beta1 * m + (1 - beta1) * g
    v = beta2 * v + (1 - beta2) * g * g
    m_hat = m / (1 - beta1**step)
    v_hat = v / (1 - beta2**step)
    return m_hat / (np.sqrt(v_hat) + eps), m, v


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> dict:
    """Update ``params`` (name -> Tensor) in place; returns the applied deltas."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name}")
    state.step += 1
    deltas = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.get(name, np.zeros_like(p.data))
        v = state.v.get(name, np.zeros_like(p.data))
        d, state.m[name], state.v[name] = adam_direction(g, m, v, state.step, state.beta1,
                                                         state.beta2, state.eps)
        delta = -(lr * d)
        p.data += delta
        deltas[name] = delta
    return deltas


@dataclass
class EpochRow:
    epoch: int
    train_rel_l2: float
    test_rel_l2: float
    lr: float
    seconds: float


@dataclass
class TrainReport:
    """Row 0 is the untrained model; rows ``1..epochs`` follow training epochs."""

    rows: list
    config: dict

    @property
    def final_test(self) -> float:
        return self.rows[-1].test_rel_l2

    @property
    def mean_epoch_seconds(self) -> float:
        secs = [r.seconds for r in self.rows[1:]]
        return float(np.mean(secs)) if secs else 0.0


def predict(model: MCNOModel, a, batch_size: int = 50) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    fwd = forward if a.shape[1] == model.grid_size else forward_at_resolution
    return np.concatenate([fwd(model, a[i:i + batch_size]).data
                           for i in range(0, a.shape[0], batch_size)])


def per_sample_errors(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    tn = np.linalg.norm(truth, axis=1)
    if np.any(tn == 0):
        raise ValueError("dataset contains an all-zero target")
    return np.linalg.norm(pred - truth, axis=1) / tn


def evaluate(model: MCNOModel, dataset: Dataset, batch_size: int = 50) -> float:
    """Mean per-sample relative L2 error, no gradient tracking."""
    if dataset.n_samples == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return float(np.mean(per_sample_errors(predict(model, dataset.a, batch_size), dataset.u)))


def train(model: MCNOModel, train_set: Dataset, test_set: Dataset, config: TrainConfig,
          out_dir: Optional[str] = None, on_epoch: Optional[Callable] = None) -> TrainReport:
    if train_set.resolution != model.grid_size:
        raise ValueError(f"training data at {train_set.resolution} points, model grid is "
                         f"{model.grid_size}")
    if config.batch_size > train_set.n_samples:
        raise ValueError("batch_size exceeds the training set size")
    from .io import save_checkpoint  # io imports this module's config type

    if config.normalize:
        model.scales = data_scales(train_set.a, train_set.u)
    shuffle = Rng(derive(config.seed, "shuffle"))
    state = AdamState()
    names = list(model.params)
    n = train_set.n_samples
    rows = [EpochRow(0, evaluate(model, train_set), evaluate(model, test_set),
                     lr_at(0, config.base_lr, config.halving_period), 0.0)]
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        lr = lr_at(epoch - 1, config.base_lr, config.halving_period)
        order = shuffle.permutation(n)
        losses = []
        for bi, start in enumerate(range(0, n, config.batch_size)):
            rows_b = order[start:start + config.batch_size]
            with ad.Tape() as tape:
                loss = ad.rel_l2_loss(forward(model, train_set.a[rows_b]), train_set.u[rows_b])
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}",
                                    epoch=epoch, batch=bi)
            grads = ad.backward(tape, loss)
            try:
                adam_step(model.params, {k: grads[model.params[k].node] for k in names}, state, lr)
            except TrainingError as e:
                raise TrainingError(f"epoch {epoch}, batch {bi}: {e}", epoch=epoch, batch=bi) from e
            losses.append(value * len(rows_b))
        test = evaluate(model, test_set)
        row = EpochRow(epoch, sum(losses) / n, test, lr, time.perf_counter() - t0)
        rows.append(row)
        log.info("epoch %d train %.5f test %.5f lr %.2e %.2fs", epoch, row.train_rel_l2,
                 row.test_rel_l2, lr, row.seconds)
        if on_epoch is not None:
            on_epoch(row)
        if out_dir and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_checkpoint(os.path.join(out_dir, f"checkpoint_{epoch:04d}.mcnc"), model)
    if out_dir:
        save_checkpoint(os.path.join(out_dir, "checkpoint_final.mcnc"), model)
    return TrainReport(rows, {"train": asdict(config), "model": model.config.to_dict(),
                              "grid_size": model.grid_size})
