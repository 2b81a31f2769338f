"""Synthetic corpora mixing cluster-level user preferences with item transitions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import InteractionDataset
from .ndkernel import make_rng


@dataclass
class SyntheticConfig:
    item_count: int = 200
    user_count: int = 2000
    clusters: int = 20
    successors: int = 3
    p_transition: float = 0.25
    p_noise: float = 0.3
    min_len: int = 5
    max_len: int = 15
    seed: int = 0


def generate(cfg: SyntheticConfig) -> InteractionDataset:
    """Each user prefers one cluster of items.

    Every step either follows one of the current item's fixed successors
    (probability ``p_transition``), jumps to a uniformly random item
    (``p_noise``), or draws uniformly from the user's preferred cluster.
    """
    rng = make_rng(cfg.seed)
    n = cfg.item_count
    cluster_of = rng.permutation(np.arange(n) % cfg.clusters)
    members = [np.flatnonzero(cluster_of == c) for c in range(cfg.clusters)]
    successor = np.stack([rng.permutation(n) for _ in range(cfg.successors)], axis=1)
    succ_p = rng.dirichlet(np.ones(cfg.successors) * 2.0, size=n)

    sequences = []
    for _ in range(cfg.user_count):
        home = members[rng.integers(cfg.clusters)]
        length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        seq = [int(rng.choice(home))]
        while len(seq) < length:
            u = rng.random()
            cur = seq[-1]
            if u < cfg.p_transition:
                nxt = successor[cur, rng.choice(cfg.successors, p=succ_p[cur])]
            elif u < cfg.p_transition + cfg.p_noise:
                nxt = rng.integers(n)
            else:
                nxt = rng.choice(home)
            seq.append(int(nxt))
        sequences.append([i + 1 for i in seq])
    return InteractionDataset.from_sequences(sequences, item_count=n)
