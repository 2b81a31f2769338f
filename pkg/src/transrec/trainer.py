"""Mini-batch Adam training with validation early stopping."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as M
from . import ndkernel as nd
from .dataio import SplitDataset, batch_iter
from .errors import DatasetError, DivergenceError, ParameterError
from .evaluator import evaluate
from .model import l2_penalty  # noqa: F401  (part of the trainer surface)
from .transition import TransitionGraph

log = logging.getLogger(__name__)

HISTORY_HEADER = ("epoch", "rec_loss", "kd_loss", "l2", "hr5", "ndcg5", "hr10", "ndcg10",
                  "hr20", "ndcg20", "seconds")
HISTORY_CUTOFFS = (5, 10, 20)

# per-component seed offsets
SEED_INIT, SEED_SHUFFLE, SEED_DROPOUT, SEED_KD = 0, 1, 2, 3


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0
    record_time: bool = True

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ParameterError("learning_rate must be >= 0")
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 0:
            raise ParameterError("patience and batch_size must be >= 1, max_epochs >= 0")


@dataclass
class EpochRecord:
    epoch: int
    rec_loss: float
    kd_loss: float
    l2: float
    metrics: dict[int, dict[str, float]]
    seconds: float

    def row(self) -> tuple:
        vals = [self.epoch, self.rec_loss, self.kd_loss, self.l2]
        for n in HISTORY_CUTOFFS:
            vals += [self.metrics[n]["hr"], self.metrics[n]["ndcg"]]
        return tuple(vals) + (self.seconds,)


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    def ndcg10(self) -> list[float]:
        return [r.metrics[10]["ndcg"] for r in self.records]

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_HEADER)
            for rec in self.records:
                row = rec.row()
                w.writerow((row[0],) + tuple(repr(float(v)) for v in row[1:]))


def sasrec_preset(config: M.ModelConfig) -> M.ModelConfig:
    """Short branch only, no distillation."""
    return replace(config, alpha=1.0, lambda_kd=0.0)


def batch_loss(params, config: M.ModelConfig, batch, graph: TransitionGraph | None,
               drop_rng, kd_rng, training: bool = True):
    """Assemble the weighted objective for one batch; returns ``(total, rec, kd)``."""
    table = M.effective_item_table(params, config, graph)
    out = M.mqsa_forward(params, config, batch.item_matrix, drop_rng, training, item_table=table)
    rec = M.masked_rec_loss(out.seq_reps, table, batch.target_matrix, batch.mask)
    kd = nd.tensor(0.0)
    if config.lambda_kd > 0 and graph is not None:
        kd = M.kd_loss(params, graph, config.tau, np.unique(batch.item_matrix),
                       kd_rng, training, config.dropout)
    loss = M.total_loss(rec, kd, params, config.lambda_kd, config.lambda_l2)
    if config.lambda_grareg > 0 and graph is not None:
        loss = nd.add(loss, nd.scale(M.grareg_loss(params["item_emb"], graph, config.grareg_k),
                                     config.lambda_grareg))
    return loss, rec, kd


def train(model_config: M.ModelConfig, train_config: TrainConfig, split: SplitDataset,
          graph: TransitionGraph | None, params=None):
    """Train and return ``(best_params, history)``; selection is on validation NDCG@10."""
    if not any(len(s) >= 2 for s in split.train):
        raise DatasetError("empty train split")
    seed = train_config.seed
    if params is None:
        params = M.init_params(model_config, split.item_count, nd.make_rng(seed + SEED_INIT))
    shuffle_rng = nd.make_rng(seed + SEED_SHUFFLE)
    drop_rng = nd.make_rng(seed + SEED_DROPOUT)
    kd_rng = nd.make_rng(seed + SEED_KD)
    plist = list(params.values())
    state = nd.AdamState.for_params(plist, learning_rate=train_config.learning_rate)

    history = TrainHistory()
    best = M.copy_params(params)
    best_score = -math.inf
    stale = 0
    for epoch in range(1, train_config.max_epochs + 1):
        start = time.perf_counter()
        rec_sum = kd_sum = 0.0
        for batch in batch_iter(split, model_config.max_len, train_config.batch_size, shuffle_rng):
            loss, rec, kd = batch_loss(params, model_config, batch, graph, drop_rng, kd_rng)
            if not np.isfinite(loss.values):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            nd.backward(loss)
            grads = [np.zeros_like(p.values) if p.grad is None else p.grad for p in plist]
            nd.adam_step(plist, grads, state)
            rec_sum += float(rec.values)
            kd_sum += float(kd.values)
        l2 = float(M.l2_penalty(params).values)
        report = evaluate(params, model_config, split, "valid", HISTORY_CUTOFFS, graph)
        seconds = time.perf_counter() - start if train_config.record_time else 0.0
        history.records.append(EpochRecord(epoch, rec_sum, kd_sum, l2, report.overall, seconds))
        score = report.overall[10]["ndcg"]
        log.info("epoch %d rec=%.4f kd=%.4f valid ndcg@10=%.4f", epoch, rec_sum, kd_sum, score)
        if score > best_score:
            best_score = score
            best = M.copy_params(params)
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= train_config.patience:
                break
    return best, history
