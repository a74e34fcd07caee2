"""Minibatch SGD training with periodic held-out verification."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import verify
from ..cubegen import NormStats, fit_norm
from .model import (
    ScnConfig,
    ScnModel,
    init_model,
    loss_and_grad,
    predict_batch,
    sgd_step,
    zero_velocity,
)

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class EvalRecord:
    iteration: int
    loss: float
    csi: Optional[float]
    pod: Optional[float]
    far: Optional[float]


@dataclass
class TrainHistory:
    records: list[EvalRecord] = field(default_factory=list)
    best_iteration: Optional[int] = None

    @property
    def iterations(self) -> list[int]:
        return [r.iteration for r in self.records]

    def rows(self) -> list[list[str]]:
        return [[str(r.iteration), f"{r.loss:.9g}", verify.fmt_score(r.csi),
                 verify.fmt_score(r.pod), verify.fmt_score(r.far)] for r in self.records]


HISTORY_COLUMNS = ("iteration", "loss", "csi", "pod", "far")


def predict_proba(model: ScnModel, dataset, chunk: int = 128) -> np.ndarray:
    """P(class 1) for every sample of ``dataset`` (raw cubes, normalised here)."""
    out = np.empty(len(dataset), dtype=np.float64)
    pos = 0
    for x, _ in dataset.iter_chunks(chunk):
        p = predict_batch(model, model.norm_stats.apply(x))
        out[pos:pos + len(p)] = p[:, 1]
        pos += len(p)
    return out


def evaluate(model: ScnModel, dataset, threshold: float = DEFAULT_THRESHOLD, chunk: int = 128):
    """Returns ``(mean cross-entropy, contingency table, probabilities)``."""
    p1 = predict_proba(model, dataset, chunk)
    y = np.asarray(dataset.labels)
    eps = 1e-12
    ce = -np.where(y == 1, np.log(np.maximum(p1, eps)), np.log(np.maximum(1 - p1, eps)))
    table = verify.contingency((p1 > threshold).astype(int), y)
    return float(ce.mean()), table, p1


def _rngs(seed: int):
    init_ss, batch_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(batch_ss)


def train(train_set, eval_set, config: ScnConfig, norm_stats: NormStats | None = None,
          threshold: float = DEFAULT_THRESHOLD, dtype=np.float32):
    """Train from a seeded initialisation; return the best-CSI checkpoint and the history.

    Every ``eval_every`` iterations the model is scored on ``eval_set``.  The
    returned model is the evaluated checkpoint with the highest CSI (undefined
    CSI ranks lowest, ties go to the earliest).  Without any evaluation the
    final model is returned.
    """
    if len(train_set) == 0 or len(eval_set) == 0:
        raise ValueError("training and evaluation sets must be non-empty")
    stats = norm_stats if norm_stats is not None else fit_norm(train_set)
    init_rng, batch_rng = _rngs(config.seed)
    model = init_model(config, seed=int(init_rng.integers(2**63)), dtype=dtype, norm_stats=stats)
    velocity = zero_velocity(model) if config.momentum else None

    history = TrainHistory()
    best, best_key = None, None
    n = len(train_set)
    order, cursor = batch_rng.permutation(n), 0
    labels = np.asarray(train_set.labels)
    for it in range(1, config.iterations + 1):
        if cursor + config.batch_size > n:
            order, cursor = batch_rng.permutation(n), 0
        idx = np.sort(order[cursor:cursor + config.batch_size])
        cursor += config.batch_size
        x = stats.apply(train_set.batch(idx))
        loss, grads = loss_and_grad(model, x, labels[idx])
        sgd_step(model, grads, config.learning_rate, velocity, config.momentum)

        if it % config.eval_every == 0:
            ev_loss, table, _ = evaluate(model, eval_set, threshold)
            rec = EvalRecord(it, ev_loss, verify.csi(table), verify.pod(table), verify.far(table))
            history.records.append(rec)
            log.info("iter %d train-loss %.4f eval-loss %.4f csi %s pod %s far %s", it, loss,
                     ev_loss, verify.fmt_score(rec.csi), verify.fmt_score(rec.pod),
                     verify.fmt_score(rec.far))
            key = -1.0 if rec.csi is None else rec.csi
            if best_key is None or key > best_key:
                best, best_key = model.copy(), key
                history.best_iteration = it
    return (best if best is not None else model), history
