"""Non-learned scorers: global popularity and last-item transition frequency."""

from __future__ import annotations

import numpy as np

from .dataio import SplitDataset
from .transition import TransitionGraph, transition_scores


def popularity_scores(split: SplitDataset) -> np.ndarray:
    counts = np.zeros(split.item_count)
    for seq in split.train:
        np.add.at(counts, np.asarray(seq, dtype=np.int64) - 1, 1.0)
    return counts


def pop_scorer(split: SplitDataset):
    counts = popularity_scores(split)
    return lambda histories: np.tile(counts, (len(histories), 1))


def transition_scorer(graph: TransitionGraph):
    def scorer(histories):
        return np.stack([transition_scores(graph, h[-1]) if h else np.zeros(graph.item_count)
                         for h in histories])

    return scorer
