"""Multi-query causal self-attention recommender with transition distillation.

Two transformer stacks share the item and positional embeddings. The short
branch queries each position with its own embedding; the long branch queries
with the mean of the last ``long_len`` real embeddings. Their outputs are mixed
by ``alpha`` and scored against the (shared) item table.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import ndkernel as nd
from .errors import CheckpointError, ContractError, ParameterError
from .ndkernel import DiffTensor
from .transition import TransitionGraph, pseudo_label_matrix

MASKED_LOGIT = -1e9
INIT_STD = 0.02
BLOCK_KEYS = ("wq", "wk", "wv", "ln1_g", "ln1_b", "ff_w1", "ff_b1", "ff_w2", "ff_b2", "ln2_g", "ln2_b")

Params = dict[str, DiffTensor]


@dataclass
class ModelConfig:
    d: int = 64
    max_len: int = 50
    num_blocks: int = 2
    long_len: int = 3
    alpha: float = 0.5
    dropout: float = 0.5
    tau: float = 0.1
    lambda_kd: float = 0.1
    lambda_l2: float = 0.0
    # comparator regularisers; both off by default
    lambda_grareg: float = 0.0
    grareg_k: int = 10
    ges_layers: int = 0

    def __post_init__(self):
        for name in ("d", "max_len", "num_blocks", "long_len"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError("alpha must lie in [0, 1]")
        if not self.tau > 0:
            raise ParameterError("tau must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError("dropout must lie in [0, 1)")
        if min(self.lambda_kd, self.lambda_l2, self.lambda_grareg) < 0:
            raise ParameterError("loss weights must be non-negative")
        if self.grareg_k < 1 or self.ges_layers < 0:
            raise ParameterError("grareg_k must be >= 1 and ges_layers >= 0")

    @property
    def uses_short(self) -> bool:
        return self.alpha > 0.0

    @property
    def uses_long(self) -> bool:
        return self.alpha < 1.0

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class ForwardOutput:
    seq_reps: DiffTensor
    short: Optional[DiffTensor]
    long: Optional[DiffTensor]


# ---------------------------------------------------------------- parameters

def truncated_normal(rng, shape, std: float = INIT_STD) -> np.ndarray:
    """Normal(0, std) resampled until every draw lies within two std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def init_params(config: ModelConfig, item_count: int, rng) -> Params:
    d = config.d
    params: Params = {}
    table = truncated_normal(rng, (item_count + 1, d))
    table[0] = 0.0
    params["item_emb"] = nd.param(table, "item_emb")
    params["pos_emb"] = nd.param(truncated_normal(rng, (config.max_len, d)), "pos_emb")
    for branch in ("short", "long"):
        for b in range(config.num_blocks):
            pre = f"{branch}.{b}."
            for key in ("wq", "wk", "wv", "ff_w1", "ff_w2"):
                params[pre + key] = nd.param(truncated_normal(rng, (d, d)), pre + key)
            for key in ("ln1_g", "ln2_g"):
                params[pre + key] = nd.param(np.ones(d), pre + key)
            for key in ("ln1_b", "ln2_b", "ff_b1", "ff_b2"):
                params[pre + key] = nd.param(np.zeros(d), pre + key)
    return {k: params[k] for k in param_order(config)}


def param_order(config: ModelConfig) -> list[str]:
    names = ["item_emb", "pos_emb"]
    for branch in ("short", "long"):
        for b in range(config.num_blocks):
            names += [f"{branch}.{b}.{k}" for k in BLOCK_KEYS]
    return names


def branch_blocks(params: Params, branch: str, num_blocks: int) -> list[dict[str, DiffTensor]]:
    return [{k: params[f"{branch}.{b}.{k}"] for k in BLOCK_KEYS} for b in range(num_blocks)]


def copy_params(params: Params) -> Params:
    return {k: nd.param(v.values.copy(), k) for k, v in params.items()}


def l2_penalty(params: Params) -> DiffTensor:
    """Sum of squares over every trainable entry, padding row excluded."""
    total = None
    for name, p in params.items():
        term = nd.sum_squares(nd.slice_rows(p, 1) if name == "item_emb" else p)
        total = term if total is None else nd.add(total, term)
    return total


# ---------------------------------------------------------------- forward

def embed_sequence(params: Params, item_matrix: np.ndarray) -> DiffTensor:
    item_matrix = np.asarray(item_matrix, dtype=np.int64)
    e = nd.embedding(params["item_emb"], item_matrix)
    n = item_matrix.shape[-1]
    pos = params["pos_emb"]
    if n != pos.shape[0]:
        pos = nd.slice_rows(pos, pos.shape[0] - n)
    return nd.add(e, pos)


def pooling_matrix(real: np.ndarray, long_len: int) -> np.ndarray:
    """Row-stochastic ``[B, n, n]`` averaging over the last ``long_len`` real positions.

    Padded positions map to themselves so that ``long_len == 1`` is the identity.
    """
    if long_len < 1:
        raise ParameterError("long_len must be >= 1")
    real = np.asarray(real, dtype=bool)
    batch, n = real.shape
    weights = np.zeros((batch, n, n))
    for t in range(n):
        lo = max(0, t - long_len + 1)
        weights[:, t, lo:t + 1] = real[:, lo:t + 1]
    counts = weights.sum(axis=-1, keepdims=True)
    pad = counts[..., 0] == 0
    weights[pad, :] = 0.0
    bi, ti = np.nonzero(pad)
    weights[bi, ti, ti] = 1.0
    counts[pad] = 1.0
    return weights / counts


def long_query_pool(e_hat: DiffTensor, real: np.ndarray, long_len: int) -> DiffTensor:
    if long_len == 1:
        return e_hat
    return nd.matmul(nd.tensor(pooling_matrix(real, long_len)), e_hat)


def attention_mask(real: np.ndarray) -> np.ndarray:
    """True where attention is allowed: key position <= query position and key is real.

    A padded query may only see itself, which keeps its row causal instead of
    spreading uniformly over every (future) position.
    """
    real = np.asarray(real, dtype=bool)
    n = real.shape[-1]
    causal = np.tril(np.ones((n, n), dtype=bool))
    return causal[None, :, :] & (real[:, None, :] | np.eye(n, dtype=bool)[None])


def causal_attention(query_src: DiffTensor, x: DiffTensor, wq: DiffTensor, wk: DiffTensor,
                     wv: DiffTensor, allowed: np.ndarray) -> DiffTensor:
    q = nd.matmul(query_src, wq)
    k = nd.matmul(x, wk)
    v = nd.matmul(x, wv)
    logits = nd.scale(nd.matmul(q, nd.transpose_last(k)), 1.0 / math.sqrt(x.shape[-1]))
    weights = nd.softmax_rows(nd.masked_fill(logits, ~allowed, MASKED_LOGIT))
    return nd.matmul(weights, v)


def branch_forward(e_hat: DiffTensor, real: np.ndarray, blocks, long_len: int | None,
                   rng, training: bool, dropout_rate: float) -> DiffTensor:
    """Stack of post-norm causal attention blocks.

    ``long_len=None`` queries with each position's own representation; an int
    queries with the mean over that many trailing real positions.
    """
    allowed = attention_mask(real)
    pool = None
    if long_len is not None and long_len > 1:
        pool = nd.tensor(pooling_matrix(real, long_len))
    x = e_hat
    for blk in blocks:
        query_src = x if pool is None else nd.matmul(pool, x)
        att = causal_attention(query_src, x, blk["wq"], blk["wk"], blk["wv"], allowed)
        att = nd.dropout(att, dropout_rate, rng, training)
        x = nd.layer_norm(nd.add(x, att), blk["ln1_g"], blk["ln1_b"])
        hidden = nd.relu(nd.add(nd.matmul(x, blk["ff_w1"]), blk["ff_b1"]))
        ff = nd.add(nd.matmul(hidden, blk["ff_w2"]), blk["ff_b2"])
        ff = nd.dropout(ff, dropout_rate, rng, training)
        x = nd.layer_norm(nd.add(x, ff), blk["ln2_g"], blk["ln2_b"])
    return x


def effective_item_table(params: Params, config: ModelConfig,
                         graph: TransitionGraph | None = None) -> DiffTensor:
    table = params["item_emb"]
    if config.ges_layers > 0 and graph is not None:
        table = ges_smooth(table, graph, config.ges_layers)
    return table


def mqsa_forward(params: Params, config: ModelConfig, item_matrix: np.ndarray, rng=None,
                 training: bool = False, item_table: DiffTensor | None = None) -> ForwardOutput:
    item_matrix = np.asarray(item_matrix, dtype=np.int64)
    real = item_matrix != 0
    if item_table is not None:
        params = dict(params, item_emb=item_table)
    e_hat = embed_sequence(params, item_matrix)
    short = long = None
    if config.uses_short:
        short = branch_forward(e_hat, real, branch_blocks(params, "short", config.num_blocks),
                               None, rng, training, config.dropout)
    if config.uses_long:
        long = branch_forward(e_hat, real, branch_blocks(params, "long", config.num_blocks),
                              config.long_len, rng, training, config.dropout)
    if long is None:
        reps = short
    elif short is None:
        reps = long
    else:
        reps = nd.add(nd.scale(short, config.alpha), nd.scale(long, 1.0 - config.alpha))
    return ForwardOutput(reps, short, long)


# ---------------------------------------------------------------- scoring and losses

def score_items(seq_rep: DiffTensor, params: Params | DiffTensor) -> DiffTensor:
    """Dot products of ``[..., d]`` representations with item rows 1..|I|."""
    table = params["item_emb"] if isinstance(params, dict) else params
    if seq_rep.values.ndim == 1:
        seq_rep = nd.reshape(seq_rep, (1, -1))
    return nd.matmul(seq_rep, nd.transpose_last(nd.slice_rows(table, 1)))


def rec_loss(scores: DiffTensor, targets: np.ndarray, mask: np.ndarray) -> DiffTensor:
    """Summed next-item cross-entropy over masked positions.

    ``scores`` has shape ``[..., |I|]``; column ``j - 1`` scores item ``j``.
    """
    item_count = scores.shape[-1]
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    idx = np.flatnonzero(np.asarray(mask, dtype=bool).reshape(-1))
    if idx.size == 0:
        return nd.tensor(0.0)
    chosen = targets[idx]
    if chosen.min() < 1 or chosen.max() > item_count:
        raise ContractError("masked position carries a target outside [1, |I|]")
    flat = nd.reshape(scores, (-1, item_count))
    rows = flat if idx.size == flat.shape[0] else nd.take_rows(flat, idx)
    return nd.scale(nd.sum_all(nd.pick(nd.log_softmax_rows(rows), chosen - 1)), -1.0)


def masked_rec_loss(reps: DiffTensor, table: DiffTensor, targets: np.ndarray,
                    mask: np.ndarray) -> DiffTensor:
    """``rec_loss`` that only scores the masked positions."""
    d = reps.shape[-1]
    idx = np.flatnonzero(np.asarray(mask, dtype=bool).reshape(-1))
    if idx.size == 0:
        return nd.tensor(0.0)
    picked = nd.take_rows(nd.reshape(reps, (-1, d)), idx)
    scores = score_items(picked, table)
    chosen = np.asarray(targets, dtype=np.int64).reshape(-1)[idx]
    return rec_loss(scores, chosen, np.ones(idx.size, dtype=bool))


def kd_loss(params: Params | DiffTensor, graph: TransitionGraph, tau: float, item_subset,
            rng=None, training: bool = False, dropout_rate: float = 0.0) -> DiffTensor:
    """Cross-entropy of the embedding dot-product student against transition teachers.

    Items in ``item_subset`` without outgoing transitions are skipped.
    """
    table = params["item_emb"] if isinstance(params, dict) else params
    kept, teacher = pseudo_label_matrix(graph, sorted({int(i) for i in item_subset if i}), tau)
    if kept.size == 0:
        return nd.tensor(0.0)
    src = nd.dropout(nd.embedding(table, kept), dropout_rate, rng, training)
    student = nd.log_softmax_rows(score_items(src, table), tau)
    return nd.scale(nd.sum_all(nd.mul(nd.tensor(teacher), student)), -1.0)


def total_loss(rec: DiffTensor, kd: DiffTensor, params: Params, lambda_kd: float,
               lambda_l2: float) -> DiffTensor:
    loss = rec
    if lambda_kd != 0.0:
        loss = nd.add(loss, nd.scale(kd, lambda_kd))
    if lambda_l2 != 0.0:
        loss = nd.add(loss, nd.scale(l2_penalty(params), lambda_l2))
    return loss


# ---------------------------------------------------------------- comparators

def top_neighbor_edges(graph: TransitionGraph, neighbor_k: int):
    """Each source's ``neighbor_k`` most frequent targets (ties: ascending id)."""
    if neighbor_k < 1:
        raise ParameterError("neighbor_k must be >= 1")
    src, dst, weight = [], [], []
    for i in sorted(graph.rows):
        ranked = sorted(graph.rows[i].items(), key=lambda kv: (-kv[1], kv[0]))[:neighbor_k]
        for j, c in ranked:
            src.append(i)
            dst.append(j)
            weight.append(float(c))
    return np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), np.array(weight)


def grareg_loss(item_embeddings: DiffTensor, graph: TransitionGraph, neighbor_k: int) -> DiffTensor:
    src, dst, weight = top_neighbor_edges(graph, neighbor_k)
    if src.size == 0:
        return nd.tensor(0.0)
    diff = nd.sub(nd.take_rows(item_embeddings, src), nd.take_rows(item_embeddings, dst))
    return nd.sum_all(nd.mul(nd.mul(diff, diff), nd.tensor(weight[:, None])))


def ges_propagation_matrix(graph: TransitionGraph) -> sp.csr_matrix:
    """``D^-1/2 (A + A^T + I) D^-1/2`` over raw ids, padding row included."""
    a = graph.to_csr()
    a_tilde = (a + a.T + sp.identity(a.shape[0], format="csr")).tocsr()
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    inv_sqrt = sp.diags(1.0 / np.sqrt(deg))
    return (inv_sqrt @ a_tilde @ inv_sqrt).tocsr()


def ges_smooth(item_embeddings: DiffTensor, graph: TransitionGraph, layers: int) -> DiffTensor:
    if layers < 0:
        raise ParameterError("layers must be >= 0")
    out = item_embeddings
    if layers == 0:
        return out
    prop = ges_propagation_matrix(graph)
    for _ in range(layers):
        out = nd.spmm(prop, out)
    return out


# ---------------------------------------------------------------- checkpoints

MAGIC = b"TRCK"
VERSION = 1


def save_checkpoint(path, params: Params, config: ModelConfig, item_count: int,
                    extra: dict | None = None) -> None:
    header = json.dumps({"model_config": asdict(config), "item_count": item_count,
                         "extra": extra or {}}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", p.values.ndim))
            fh.write(struct.pack(f"<{p.values.ndim}Q", *p.values.shape))
            fh.write(np.ascontiguousarray(p.values, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[Params, ModelConfig, int, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    off = 12
    header = json.loads(data[off:off + hlen].decode("utf-8"))
    off += hlen
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    params: Params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
        off += 8 * size
        params[name] = nd.param(arr, name)
    config = ModelConfig(**header["model_config"])
    return params, config, int(header["item_count"]), header.get("extra", {})
