"""Dense float64 arrays with a reverse-mode tape, plus Adam and a gradient checker.

Every op takes :class:`DiffTensor` inputs and returns a new node that remembers
its parents and a closure mapping the output gradient to parent gradients.
Node ids come from a process-wide counter, so creation order is a valid
topological order and :func:`backward` simply replays nodes by descending id.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, ParameterError

_node_ids = itertools.count()

Rng = np.random.Generator


def make_rng(seed: int) -> Rng:
    """Philox counter-based generator keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


class DiffTensor:
    __slots__ = ("values", "grad", "parents", "backward_fn", "tape_id", "requires_grad", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None,
                 parents: tuple = (), backward_fn: Callable | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.tape_id = next(_node_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"DiffTensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor(values, name: str | None = None) -> DiffTensor:
    return DiffTensor(values, requires_grad=False, name=name)


def param(values, name: str | None = None) -> DiffTensor:
    return DiffTensor(np.array(values, dtype=np.float64), requires_grad=True, name=name)


def _node(values, parents: Sequence[DiffTensor], backward_fn) -> DiffTensor:
    live = tuple(p for p in parents if p.requires_grad)
    if not live:
        return DiffTensor(values)
    return DiffTensor(values, requires_grad=True, parents=tuple(parents), backward_fn=backward_fn)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(out: DiffTensor) -> None:
    """Populate ``.grad`` on every node that feeds ``out``.

    ``out`` must hold a single value. Existing gradients are overwritten.
    """
    if out.values.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {out.shape}")
    order: list[DiffTensor] = []
    seen: set[int] = set()
    stack = [out]
    while stack:
        node = stack.pop()
        if node.tape_id in seen or not node.requires_grad:
            continue
        seen.add(node.tape_id)
        order.append(node)
        stack.extend(node.parents)
    order.sort(key=lambda n: n.tape_id, reverse=True)

    pending: dict[int, np.ndarray] = {out.tape_id: np.ones_like(out.values)}
    for node in order:
        g = pending.pop(node.tape_id, None)
        if g is None:
            g = np.zeros_like(node.values)
        node.grad = g
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.tape_id in pending:
                pending[parent.tape_id] = pending[parent.tape_id] + pg
            else:
                pending[parent.tape_id] = pg


# ---------------------------------------------------------------- elementwise

def add(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    out = a.values + b.values

    def fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out, (a, b), fn)


def sub(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    out = a.values - b.values

    def fn(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _node(out, (a, b), fn)


def mul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    out = a.values * b.values

    def fn(g):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)

    return _node(out, (a, b), fn)


def scale(a: DiffTensor, c: float) -> DiffTensor:
    c = float(c)
    return _node(a.values * c, (a,), lambda g: (g * c,))


def relu(a: DiffTensor) -> DiffTensor:
    on = a.values > 0
    return _node(np.where(on, a.values, 0.0), (a,), lambda g: (g * on,))


def masked_fill(a: DiffTensor, mask: np.ndarray, value: float) -> DiffTensor:
    """Replace entries where ``mask`` is true by a constant; those entries carry no gradient."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    out = np.where(mask, value, a.values)
    return _node(out, (a,), lambda g: (np.where(mask, 0.0, g),))


# ---------------------------------------------------------------- reductions

def sum_all(a: DiffTensor) -> DiffTensor:
    return _node(np.array(a.values.sum()), (a,), lambda g: (np.full(a.shape, float(g)),))


def sum_squares(a: DiffTensor) -> DiffTensor:
    v = a.values
    return _node(np.array(np.sum(v * v)), (a,), lambda g: (2.0 * float(g) * v,))


# ---------------------------------------------------------------- shape ops

def reshape(a: DiffTensor, shape: tuple[int, ...]) -> DiffTensor:
    return _node(a.values.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose_last(a: DiffTensor) -> DiffTensor:
    return _node(np.swapaxes(a.values, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def slice_rows(a: DiffTensor, start: int, stop: int | None = None) -> DiffTensor:
    out = a.values[start:stop]

    def fn(g):
        full = np.zeros_like(a.values)
        full[start:stop] = g
        return (full,)

    return _node(out, (a,), fn)


def take_rows(a: DiffTensor, index: np.ndarray) -> DiffTensor:
    """Gather along the first axis; repeated indices accumulate in backward."""
    index = np.asarray(index, dtype=np.int64)
    out = a.values[index]

    def fn(g):
        full = np.zeros_like(a.values)
        np.add.at(full, index, g)
        return (full,)

    return _node(out, (a,), fn)


def embedding(table: DiffTensor, ids: np.ndarray, padding_idx: int | None = 0) -> DiffTensor:
    """Row lookup ``table[ids]`` for an integer array of any shape.

    The row at ``padding_idx`` never receives gradient.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"id out of range [0, {table.shape[0] - 1}]")
    out = table.values[ids]

    def fn(g):
        full = np.zeros_like(table.values)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        if padding_idx is not None:
            full[padding_idx] = 0.0
        return (full,)

    return _node(out, (table,), fn)


def pick(a: DiffTensor, index: np.ndarray) -> DiffTensor:
    """``a[r, index[r]]`` for a 2-D ``a``."""
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(a.shape[0])
    out = a.values[rows, index]

    def fn(g):
        full = np.zeros_like(a.values)
        full[rows, index] = g
        return (full,)

    return _node(out, (a,), fn)


# ---------------------------------------------------------------- linear algebra

def matmul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    """Matrix product over the last two axes, broadcasting leading axes."""
    if a.values.ndim < 2 or b.values.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = np.matmul(a.values, b.values)

    def fn(g):
        ga = np.matmul(g, np.swapaxes(b.values, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.values, -1, -2), g) if b.requires_grad else None
        if ga is not None:
            ga = _unbroadcast(ga, a.shape)
        if gb is not None:
            gb = _unbroadcast(gb, b.shape)
        return ga, gb

    return _node(out, (a, b), fn)


def spmm(matrix, a: DiffTensor) -> DiffTensor:
    """Constant (scipy sparse or dense) matrix times a 2-D tensor."""
    if matrix.shape[1] != a.shape[0]:
        raise DimensionError(f"spmm shape mismatch: {matrix.shape} x {a.shape}")
    out = np.asarray(matrix @ a.values)
    return _node(out, (a,), lambda g: (np.asarray(matrix.T @ g),))


# ---------------------------------------------------------------- normalisation

def _check_temperature(temperature: float) -> None:
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")


def softmax_rows(x: DiffTensor, temperature: float = 1.0) -> DiffTensor:
    """Softmax over the last axis of ``x / temperature`` with row-max subtraction."""
    _check_temperature(temperature)
    z = (x.values - x.values.max(axis=-1, keepdims=True)) / temperature
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)) / temperature,)

    return _node(y, (x,), fn)


def log_softmax_rows(x: DiffTensor, temperature: float = 1.0) -> DiffTensor:
    _check_temperature(temperature)
    z = (x.values - x.values.max(axis=-1, keepdims=True)) / temperature
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse

    def fn(g):
        y = np.exp(out)
        return ((g - y * g.sum(axis=-1, keepdims=True)) / temperature,)

    return _node(out, (x,), fn)


def layer_norm(x: DiffTensor, gain: DiffTensor, bias: DiffTensor, eps: float = 1e-8) -> DiffTensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: features {d} vs gain {gain.shape}, bias {bias.shape}")
    mu = x.values.mean(axis=-1, keepdims=True)
    centred = x.values - mu
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv_std
    out = xhat * gain.values + bias.values

    def fn(g):
        lead = tuple(range(g.ndim - 1))
        dgain = np.sum(g * xhat, axis=lead)
        dbias = np.sum(g, axis=lead)
        dxhat = g * gain.values
        dx = inv_std * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True))
        return dx, dgain, dbias

    return _node(out, (x, gain, bias), fn)


def dropout(x: DiffTensor, rate: float, rng: Rng | None, training: bool) -> DiffTensor:
    """Inverted dropout. Identity when not training or when ``rate`` is 0."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _node(x.values * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------- optimiser

@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    learning_rate: float = 1e-3

    @classmethod
    def for_params(cls, params: Sequence[DiffTensor], **hyper) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(p.values) for p in params],
            second_moment=[np.zeros_like(p.values) for p in params],
            **hyper,
        )


def adam_step(params: Sequence[DiffTensor], grads: Sequence[np.ndarray], state: AdamState):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if not (len(params) == len(grads) == len(state.first_moment)):
        raise DimensionError("adam_step: params, grads and moments differ in count")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape or m.shape != p.shape:
            raise DimensionError(f"adam_step: param {p.shape} vs grad {np.shape(g)}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.values -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state


# ---------------------------------------------------------------- gradient check

def grad_check(fn: Callable[[Sequence[DiffTensor]], DiffTensor], point: Sequence[DiffTensor],
               step: float = 1e-5) -> float:
    """Max elementwise relative error between backward and central differences.

    ``fn`` must rebuild its graph from ``point`` on every call. Error per entry is
    ``|a - c| / max(1e-8, |a| + |c|)``.
    """
    out = fn(point)
    if out.values.size != 1:
        raise ContractError(f"grad_check needs a scalar function, got shape {out.shape}")
    backward(out)
    analytic = [np.zeros_like(p.values) if p.grad is None else p.grad.copy() for p in point]
    worst = 0.0
    for p, a in zip(point, analytic):
        flat = p.values.reshape(-1)
        a_flat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(fn(point).values)
            flat[i] = orig - step
            down = float(fn(point).values)
            flat[i] = orig
            c = (up - down) / (2.0 * step)
            err = abs(a_flat[i] - c) / max(1e-8, abs(a_flat[i]) + abs(c))
            worst = max(worst, err)
    return worst

