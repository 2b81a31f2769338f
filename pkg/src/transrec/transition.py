"""Global item-transition graph, distillation pseudo-labels and the transition recommender."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .errors import ParameterError


class NoTransitionRow(LookupError):
    """Raised when a source item has no outgoing transitions."""


@dataclass
class TransitionGraph:
    item_count: int
    k: int
    rows: dict[int, dict[int, int]] = field(default_factory=dict)

    def row(self, i: int) -> dict[int, int]:
        return self.rows.get(i, {})

    def total(self) -> int:
        return sum(sum(r.values()) for r in self.rows.values())

    def to_csr(self) -> sp.csr_matrix:
        """Counts as an ``(item_count + 1)`` square matrix indexed by raw item id."""
        src, dst, val = [], [], []
        for i, row in self.rows.items():
            for j, c in row.items():
                src.append(i)
                dst.append(j)
                val.append(c)
        n = self.item_count + 1
        return sp.csr_matrix((np.asarray(val, dtype=np.float64), (src, dst)), shape=(n, n))

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for i in sorted(self.rows):
                for j in sorted(self.rows[i]):
                    fh.write(f"{i}\t{j}\t{self.rows[i][j]}\n")

    @classmethod
    def load(cls, path, item_count: int, k: int = 1) -> "TransitionGraph":
        rows: dict[int, dict[int, int]] = defaultdict(dict)
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    i, j, c = (int(x) for x in line.split("\t"))
                    rows[i][j] = c
        return cls(item_count, k, dict(rows))


def build_transition_graph(sequences: Iterable, item_count: int, k: int = 1) -> TransitionGraph:
    """Count (i_t -> i_{t+delta}) pairs for 1 <= delta <= k over every sequence."""
    if k < 1:
        raise ParameterError(f"time span k must be >= 1, got {k}")
    rows: dict[int, dict[int, int]] = defaultdict(dict)
    for seq in sequences:
        seq = list(seq)
        for t, src in enumerate(seq):
            row = rows[src]
            for dst in seq[t + 1:t + 1 + k]:
                row[dst] = row.get(dst, 0) + 1
    return TransitionGraph(item_count, k, {i: r for i, r in rows.items() if r})


def transition_frequency(g: TransitionGraph, i: int, j: int) -> int:
    return g.rows.get(i, {}).get(j, 0)


def row_normalize(g: TransitionGraph, i: int) -> dict[int, float]:
    row = g.row(i)
    if not row:
        return {}
    top = max(row.values())
    return {j: c / top for j, c in row.items()}


def dense_normalized_row(g: TransitionGraph, i: int) -> np.ndarray:
    """Length-|I| vector of row-max-normalised counts; entry j-1 is item j."""
    out = np.zeros(g.item_count)
    for j, v in row_normalize(g, i).items():
        out[j - 1] = v
    return out


def pseudo_label_row(g: TransitionGraph, i: int, tau: float) -> np.ndarray:
    """Temperature softmax of the normalised row over all |I| items."""
    if not tau > 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    if not g.row(i):
        raise NoTransitionRow(i)
    z = dense_normalized_row(g, i) / tau
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


def pseudo_label_matrix(g: TransitionGraph, items, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Teacher rows for the items of ``items`` that have outgoing transitions.

    Returns ``(kept_items, probs)`` where ``probs[r]`` is the teacher for ``kept_items[r]``.
    """
    kept = np.array([i for i in items if g.row(int(i))], dtype=np.int64)
    probs = np.empty((len(kept), g.item_count))
    for r, i in enumerate(kept):
        probs[r] = pseudo_label_row(g, int(i), tau)
    return kept, probs


def transition_scores(g: TransitionGraph, current: int) -> np.ndarray:
    """Dense length-|I| frequency vector from ``current``; entry j-1 is item j."""
    out = np.zeros(g.item_count)
    for j, c in g.row(current).items():
        out[j - 1] = c
    return out


def transition_recommend(g: TransitionGraph, current: int, top_n: int, exclusions=()) -> list[int]:
    if top_n < 1:
        raise ParameterError("top_n must be >= 1")
    excluded = set(exclusions)
    freq = transition_scores(g, current)
    ids = np.arange(1, g.item_count + 1)
    # lexsort: last key is primary
    order = np.lexsort((ids, -freq))
    ranked = [int(ids[o]) for o in order if int(ids[o]) not in excluded]
    return ranked[:top_n]
