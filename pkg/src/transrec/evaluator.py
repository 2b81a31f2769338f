"""Full-ranking leave-one-out evaluation, HR@N / NDCG@N, and transition-frequency groups."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import model as M
from .dataio import SplitDataset, pad_left
from .errors import ContractError, ParseError
from .transition import TransitionGraph, transition_frequency

DEFAULT_CUTOFFS = (5, 10, 20)
BUCKETS = ("0", "1", "2", "3", ">=4")

Scorer = Callable[[list[list[int]]], np.ndarray]


@dataclass
class EvalReport:
    cutoffs: tuple[int, ...]
    overall: dict[int, dict[str, float]]
    user_count: int
    groups: dict[str, dict[int, dict[str, float]]] = field(default_factory=dict)
    group_counts: dict[str, int] = field(default_factory=dict)
    ranks: dict[int, int] = field(default_factory=dict)

    def value(self, metric: str, cutoff: int, group: str = "all") -> float:
        table = self.overall if group == "all" else self.groups[group]
        return table[cutoff][metric]

    def rows(self) -> list[tuple[str, int, str, float, int]]:
        out = []
        sections = [("all", self.overall, self.user_count)]
        sections += [(g, self.groups[g], self.group_counts[g]) for g in BUCKETS if self.group_counts.get(g)]
        for group, table, count in sections:
            for n in self.cutoffs:
                for metric in ("hr", "ndcg"):
                    out.append((metric, n, group, table[n][metric], count))
        return out


def rank_of_target(scores: np.ndarray, target: int, exclusions=()) -> int:
    """1-based rank of ``target`` (column ``target - 1``) among non-excluded items.

    Ties are broken in favour of the smaller item id.
    """
    excluded = set(int(e) for e in exclusions)
    if target in excluded:
        raise ContractError(f"target {target} is excluded")
    scores = np.asarray(scores, dtype=np.float64)
    ids = np.arange(1, scores.size + 1)
    keep = np.ones(scores.size, dtype=bool)
    if excluded:
        keep[np.fromiter(excluded, dtype=np.int64) - 1] = False
    s = scores[target - 1]
    ahead = (scores > s) | ((scores == s) & (ids < target))
    return 1 + int(np.count_nonzero(ahead & keep))


def batch_ranks(scores: np.ndarray, targets: np.ndarray, excluded: np.ndarray) -> np.ndarray:
    """Vectorised :func:`rank_of_target` over rows; ``excluded`` is a boolean ``[B, |I|]``."""
    rows = np.arange(scores.shape[0])
    s = scores[rows, targets - 1][:, None]
    ids = np.arange(1, scores.shape[1] + 1)[None, :]
    ahead = (scores > s) | ((scores == s) & (ids < targets[:, None]))
    return 1 + np.count_nonzero(ahead & ~excluded, axis=1)


def metrics_at(rank: int, cutoffs: Sequence[int] = DEFAULT_CUTOFFS) -> dict[int, dict[str, float]]:
    if rank < 1:
        raise ValueError("rank must be >= 1")
    out = {}
    for n in cutoffs:
        hit = rank <= n
        out[n] = {"hr": 1.0 if hit else 0.0, "ndcg": 1.0 / math.log2(rank + 1) if hit else 0.0}
    return out


def _mean_metrics(ranks: Sequence[int], cutoffs) -> dict[int, dict[str, float]]:
    ranks = np.asarray(ranks, dtype=np.float64)
    out = {}
    for n in cutoffs:
        if ranks.size == 0:
            out[n] = {"hr": 0.0, "ndcg": 0.0}
            continue
        hit = ranks <= n
        out[n] = {"hr": float(hit.mean()),
                  "ndcg": float(np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0).mean())}
    return out


def phase_inputs(split: SplitDataset, phase: str):
    """Per eligible user: (user, input history, target)."""
    if phase not in ("valid", "test"):
        raise ValueError(f"phase must be 'valid' or 'test', got {phase!r}")
    out = []
    for u in split.eligible_users():
        history = list(split.train[u])
        if phase == "test":
            history.append(split.valid_target[u])
            target = split.test_target[u]
        else:
            target = split.valid_target[u]
        out.append((u, history, target))
    return out


def evaluate_scorer(scorer: Scorer, split: SplitDataset, phase: str,
                    cutoffs: Sequence[int] = DEFAULT_CUTOFFS, batch_size: int = 512) -> EvalReport:
    """Rank every eligible user's target with ``scorer`` and average the metrics.

    The user's own history is excluded from ranking, except for the target itself.
    """
    cutoffs = tuple(cutoffs)
    inputs = phase_inputs(split, phase)
    ranks: dict[int, int] = {}
    for start in range(0, len(inputs), batch_size):
        chunk = inputs[start:start + batch_size]
        scores = np.asarray(scorer([h for _, h, _ in chunk]), dtype=np.float64)
        targets = np.array([t for _, _, t in chunk], dtype=np.int64)
        excluded = np.zeros(scores.shape, dtype=bool)
        for r, (_, history, target) in enumerate(chunk):
            excluded[r, np.asarray(history, dtype=np.int64) - 1] = True
            excluded[r, target - 1] = False
        for (u, _, _), rank in zip(chunk, batch_ranks(scores, targets, excluded)):
            ranks[u] = int(rank)
    return EvalReport(cutoffs, _mean_metrics(list(ranks.values()), cutoffs), len(ranks), ranks=ranks)


def model_scorer(params, config: M.ModelConfig, graph: TransitionGraph | None = None) -> Scorer:
    table = M.effective_item_table(params, config, graph)

    def scorer(histories):
        items = np.stack([pad_left(h, config.max_len) for h in histories])
        out = M.mqsa_forward(params, config, items, training=False, item_table=table)
        return M.score_items(out.seq_reps, table).values[:, -1, :]

    return scorer


def evaluate(params, config: M.ModelConfig, split: SplitDataset, phase: str = "test",
             cutoffs: Sequence[int] = DEFAULT_CUTOFFS, graph: TransitionGraph | None = None,
             batch_size: int = 512) -> EvalReport:
    """Inference-mode evaluation; the score comes from the final input position."""
    return evaluate_scorer(model_scorer(params, config, graph), split, phase, cutoffs, batch_size)


def bucket_of(frequency: int) -> str:
    return ">=4" if frequency >= 4 else str(frequency)


def grouped_evaluate(ranks: dict[int, int], split: SplitDataset, graph: TransitionGraph,
                     cutoffs: Sequence[int] = DEFAULT_CUTOFFS):
    """Bucket users by the observed valid -> test transition frequency."""
    members: dict[str, list[int]] = {b: [] for b in BUCKETS}
    for u, rank in ranks.items():
        freq = transition_frequency(graph, split.valid_target[u], split.test_target[u])
        members[bucket_of(freq)].append(rank)
    groups = {b: _mean_metrics(r, cutoffs) for b, r in members.items()}
    counts = {b: len(r) for b, r in members.items()}
    return groups, counts


def add_groups(report: EvalReport, split: SplitDataset, graph: TransitionGraph) -> EvalReport:
    report.groups, report.group_counts = grouped_evaluate(report.ranks, split, graph, report.cutoffs)
    return report


REPORT_HEADER = ("metric", "cutoff", "group", "value", "count")


def write_report_csv(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for metric, n, group, value, count in report.rows():
            w.writerow((metric, n, group, repr(float(value)), count))


def read_report_csv(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_HEADER:
            raise ParseError(f"{path}: expected header {','.join(REPORT_HEADER)}", 1)
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append({"metric": row["metric"], "cutoff": int(row["cutoff"]),
                             "group": row["group"], "value": float(row["value"]),
                             "count": int(row["count"])})
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}: {exc}", lineno) from None
    return rows
