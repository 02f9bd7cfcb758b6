"""Dense 2-D tensors with define-by-run reverse-mode differentiation.

Every tensor is a float64 matrix. Operations executed while a :class:`Tape`
is active (``with Tape() as tape:``) and touching at least one tensor with
``requires_grad`` are recorded; :func:`backward` walks the tape in reverse.
Outside a tape the same functions run as plain numpy, which is what the
eval-mode scorer uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64

_ACTIVE: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, _wrap(other))

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data) -> Tensor:
    """Inject a fixed array (e.g. looked-up embeddings) as a non-trainable leaf."""
    return Tensor(data, requires_grad=False)


class Tape:
    """Append-only record of differentiable operations, in execution order."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False

    def __len__(self):
        return len(self.nodes)


def _record(out_data, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out._parents = ()
    out._backward = None
    out.requires_grad = False
    if _ACTIVE and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        _ACTIVE[-1].nodes.append(out)
    return out


def backward(tape: Tape, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to each of ``params``.

    Parameters unreachable from the loss get a zero array.
    """
    if loss.shape != (1, 1):
        raise ValueError(f"loss must be a scalar (1x1) tensor, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1), dtype=DTYPE)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return [grads.get(id(p), np.zeros_like(p.data)) for p in params]


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True).reshape(shape)


# --- elementwise -----------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; a 1xq row, px1 column or 1x1 operand broadcasts."""
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _record(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    """Logistic function with sigmoid(-x) == 1 - sigmoid(x) holding bit-exactly."""
    x = np.asarray(x, dtype=DTYPE)
    pos = 1.0 / (1.0 + np.exp(-np.abs(x)))
    return np.where(x >= 0, pos, 1.0 - pos)


def sigmoid(a: Tensor) -> Tensor:
    y = sigmoid_array(a.data)
    return _record(y, (a,), lambda g: (g * y * (1.0 - y),))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _record(np.log(x), (a,), lambda g: (g / x,))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    x = a.data
    keep = x >= floor
    return _record(np.maximum(x, floor), (a,), lambda g: (g * keep,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _record(a.data.sum().reshape(1, 1), (a,),
                   lambda g: (np.full(shape, g[0, 0], dtype=DTYPE),))


def add_n(terms: Sequence[Tensor]) -> Tensor:
    if not terms:
        raise ValueError("add_n needs at least one term")
    shape = terms[0].shape
    for t in terms:
        if t.shape != shape:
            raise ValueError(f"add_n shape mismatch: {shape} vs {t.shape}")
    total = terms[0].data.copy()
    for t in terms[1:]:
        total += t.data
    return _record(total, tuple(terms), lambda g: tuple(g for _ in terms))


# --- linear algebra and structure -------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def transpose(a: Tensor) -> Tensor:
    return _record(a.data.T.copy(), (a,), lambda g: (g.T,))


def hconcat(parts: Sequence[Tensor]) -> Tensor:
    """Join matrices side by side (column-wise)."""
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ValueError(f"hconcat needs equal heights, got {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    return _record(np.concatenate([p.data for p in parts], axis=1), tuple(parts),
                   lambda g: tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts))))


def vconcat(parts: Sequence[Tensor]) -> Tensor:
    """Stack matrices on top of each other (row-wise)."""
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise ValueError(f"vconcat needs equal widths, got {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])
    return _record(np.concatenate([p.data for p in parts], axis=0), tuple(parts),
                   lambda g: tuple(g[bounds[i]:bounds[i + 1], :] for i in range(len(parts))))


def slice_(a: Tensor, rows: slice = slice(None), cols: slice = slice(None)) -> Tensor:
    shape = a.shape

    def grad_fn(g):
        full = np.zeros(shape, dtype=DTYPE)
        full[rows, cols] = g
        return (full,)

    return _record(a.data[rows, cols].copy(), (a,), grad_fn)


def softmax_cols(m: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Normalise every column to a probability distribution.

    ``mask`` is a boolean array of m's shape; False entries are excluded
    (exactly 0 in the output). Each column needs one unmasked entry.
    """
    x = m.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ValueError(f"mask shape {mask.shape} != input shape {x.shape}")
        if not mask.any(axis=0).all():
            raise ValueError("softmax_cols: a column is fully masked")
        x = np.where(mask, x, -np.inf)
    z = np.exp(x - x.max(axis=0, keepdims=True))
    y = z / z.sum(axis=0, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=0, keepdims=True)),)

    return _record(y, (m,), grad_fn)


def max_cols(m: Tensor) -> Tensor:
    """Row-wise max over columns (max-over-time); gradient goes to the argmax only."""
    x = m.data
    idx = x.argmax(axis=1)
    rows = np.arange(x.shape[0])
    shape = x.shape

    def grad_fn(g):
        full = np.zeros(shape, dtype=DTYPE)
        full[rows, idx] = g[:, 0]
        return (full,)

    return _record(x[rows, idx].reshape(-1, 1), (m,), grad_fn)


def dropout(a: Tensor, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout: train mode zeroes with probability p and scales by 1/(1-p)."""
    if not train or p == 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return _record(a.data * keep, (a,), lambda g: (g * keep,))


def lstm(x: Tensor, w_in: Tensor, w_rec: Tensor, bias: Tensor, reverse: bool = False) -> Tensor:
    """One LSTM direction over the columns of ``x`` (features x time).

    Gate rows are ordered input, forget, candidate, output. Initial hidden
    and cell states are zero. Returns the hidden states, hidden x time, with
    column t holding the state after reading position t regardless of
    direction. Recorded as a single node with a hand-written BPTT backward.
    """
    n_in, steps = x.shape
    hidden = w_rec.shape[1]
    if w_in.shape != (4 * hidden, n_in) or w_rec.shape != (4 * hidden, hidden) \
            or bias.shape != (4 * hidden, 1):
        raise ValueError(
            f"lstm weight shapes {w_in.shape}, {w_rec.shape}, {bias.shape} "
            f"incompatible with input {x.shape} and hidden size {hidden}")
    wr = w_rec.data
    zx = w_in.data @ x.data + bias.data
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    h_all = np.zeros((hidden, steps), dtype=DTYPE)
    c_all = np.zeros((hidden, steps), dtype=DTYPE)
    gates = np.zeros((4 * hidden, steps), dtype=DTYPE)
    h = np.zeros(hidden, dtype=DTYPE)
    c = np.zeros(hidden, dtype=DTYPE)
    for t in order:
        z = zx[:, t] + wr @ h
        act = gates[:, t]
        act[:2 * hidden] = sigmoid_array(z[:2 * hidden])
        act[2 * hidden:3 * hidden] = np.tanh(z[2 * hidden:3 * hidden])
        act[3 * hidden:] = sigmoid_array(z[3 * hidden:])
        c = act[hidden:2 * hidden] * c + act[:hidden] * act[2 * hidden:3 * hidden]
        h = act[3 * hidden:] * np.tanh(c)
        c_all[:, t] = c
        h_all[:, t] = h
    order = list(order)

    def grad_fn(g):
        dz_all = np.zeros((4 * hidden, steps), dtype=DTYPE)
        dwr = np.zeros_like(wr)
        dh_next = np.zeros(hidden, dtype=DTYPE)
        dc_next = np.zeros(hidden, dtype=DTYPE)
        zero = np.zeros(hidden, dtype=DTYPE)
        for k in range(steps - 1, -1, -1):
            t = order[k]
            prev = order[k - 1] if k > 0 else None
            c_prev = c_all[:, prev] if prev is not None else zero
            h_prev = h_all[:, prev] if prev is not None else zero
            i_g = gates[:hidden, t]
            f_g = gates[hidden:2 * hidden, t]
            g_g = gates[2 * hidden:3 * hidden, t]
            o_g = gates[3 * hidden:, t]
            tc = np.tanh(c_all[:, t])
            dh = g[:, t] + dh_next
            dc = dh * o_g * (1.0 - tc * tc) + dc_next
            dz = dz_all[:, t]
            dz[:hidden] = dc * g_g * i_g * (1.0 - i_g)
            dz[hidden:2 * hidden] = dc * c_prev * f_g * (1.0 - f_g)
            dz[2 * hidden:3 * hidden] = dc * i_g * (1.0 - g_g * g_g)
            dz[3 * hidden:] = dh * tc * o_g * (1.0 - o_g)
            if prev is not None:
                dwr += np.outer(dz, h_prev)
            dh_next = wr.T @ dz
            dc_next = dc * f_g
        return (w_in.data.T @ dz_all, dz_all @ x.data.T, dwr,
                dz_all.sum(axis=1, keepdims=True))

    return _record(h_all, (x, w_in, w_rec, bias), grad_fn)


# --- optimisation ------------------------------------------------------------

def global_norm(grads: Sequence[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_global_norm(grads: Sequence[np.ndarray], threshold: float) -> list[np.ndarray]:
    """Rescale all gradients jointly so their global L2 norm is at most ``threshold``."""
    if threshold <= 0:
        raise ValueError(f"clip threshold must be positive, got {threshold}")
    norm = global_norm(grads)
    if norm > threshold:
        scale = threshold / norm
        return [g * scale for g in grads]
    return list(grads)


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState) -> AdamState:
    """Apply one bias-corrected Adam update to ``params`` in place."""
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    t = state.step
    corr1 = 1.0 - state.beta1 ** t
    corr2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return state
