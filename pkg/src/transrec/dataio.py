"""Interaction sequences: loading, leave-one-out split, and padded batches."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import DatasetError, ParseError, ValidationError


@dataclass(frozen=True)
class InteractionDataset:
    user_count: int
    item_count: int
    sequences: tuple[tuple[int, ...], ...]
    user_ids: tuple[int, ...] = ()

    def __post_init__(self):
        for seq in self.sequences:
            for item in seq:
                if not 1 <= item <= self.item_count:
                    raise ValidationError(f"item id {item} outside [1, {self.item_count}]")

    @classmethod
    def from_sequences(cls, sequences, item_count: int | None = None, user_ids=None) -> "InteractionDataset":
        seqs = tuple(tuple(int(i) for i in s) for s in sequences)
        if not seqs:
            raise DatasetError("no sequences")
        if item_count is None:
            item_count = max((max(s) for s in seqs if s), default=0)
        ids = tuple(user_ids) if user_ids is not None else tuple(range(1, len(seqs) + 1))
        return cls(user_count=len(seqs), item_count=item_count, sequences=seqs, user_ids=ids)


@dataclass(frozen=True)
class SplitDataset:
    item_count: int
    train: tuple[tuple[int, ...], ...]
    valid_target: tuple[int | None, ...]
    test_target: tuple[int | None, ...]

    @property
    def user_count(self) -> int:
        return len(self.train)

    def eligible_users(self) -> list[int]:
        return [u for u, t in enumerate(self.test_target) if t is not None]


@dataclass
class Batch:
    item_matrix: np.ndarray
    target_matrix: np.ndarray
    mask: np.ndarray
    users: np.ndarray


def load_sequences(path) -> InteractionDataset:
    """Read ``user_id<TAB>item item ...`` lines."""
    users, seqs = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError("expected 'user<TAB>items'", lineno)
            try:
                user = int(parts[0])
                items = [int(tok) for tok in parts[1].split()]
            except ValueError as exc:
                raise ParseError(f"non-integer id ({exc})", lineno) from None
            if not items:
                raise ParseError("empty item list", lineno)
            bad = [i for i in items if i < 1]
            if bad or user < 1:
                raise ValidationError(f"line {lineno}: ids must be >= 1")
            users.append(user)
            seqs.append(items)
    if not seqs:
        raise DatasetError("no sequences")
    return InteractionDataset.from_sequences(seqs, user_ids=users)


def write_sequences(ds: InteractionDataset, path) -> None:
    ids = ds.user_ids or tuple(range(1, ds.user_count + 1))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for user, seq in zip(ids, ds.sequences):
            fh.write(f"{user}\t{' '.join(map(str, seq))}\n")


def leave_one_out_split(ds: InteractionDataset) -> SplitDataset:
    train, valid, test = [], [], []
    for seq in ds.sequences:
        if len(seq) >= 3:
            train.append(tuple(seq[:-2]))
            valid.append(seq[-2])
            test.append(seq[-1])
        else:
            train.append(tuple(seq))
            valid.append(None)
            test.append(None)
    return SplitDataset(ds.item_count, tuple(train), tuple(valid), tuple(test))


def pad_left(seq, max_len: int) -> np.ndarray:
    row = np.zeros(max_len, dtype=np.int64)
    tail = list(seq)[-max_len:]
    if tail:
        row[max_len - len(tail):] = tail
    return row


def training_example(seq, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    window = list(seq)[-(max_len + 1):]
    return pad_left(window[:-1], max_len), pad_left(window[1:], max_len)


def batch_iter(split: SplitDataset, max_len: int, batch_size: int, rng) -> Iterator[Batch]:
    """One shuffled epoch of left-padded (input, next-item) batches.

    Users whose training prefix has fewer than two items contribute no target
    and are skipped.
    """
    if max_len < 1 or batch_size < 1:
        raise ValueError("max_len and batch_size must be >= 1")
    users = np.array([u for u, s in enumerate(split.train) if len(s) >= 2], dtype=np.int64)
    order = users[rng.permutation(len(users))]
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        items = np.zeros((len(chunk), max_len), dtype=np.int64)
        targets = np.zeros_like(items)
        for r, u in enumerate(chunk):
            items[r], targets[r] = training_example(split.train[u], max_len)
        yield Batch(items, targets, targets != 0, chunk)


def dataset_stats(ds: InteractionDataset) -> dict:
    actions = sum(len(s) for s in ds.sequences)
    return {
        "users": ds.user_count,
        "items": ds.item_count,
        "actions": actions,
        "density": actions / (ds.user_count * ds.item_count),
        "avg_len": actions / ds.user_count,
    }
