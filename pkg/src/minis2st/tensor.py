"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Every value is a numpy float64 buffer wrapped in a Tensor.  Operations executed
while a Tape is active append (output, pullback) nodes to that tape; backward()
walks the tape in reverse insertion order exactly once and accumulates gradients
into every reachable tensor that has requires_grad set.  Gradients add across
uses and across repeated backward calls; callers reset with zero_grad().

Outside an active tape nothing is recorded and outputs never require grad, which
is what inference paths use.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

_state = threading.local()


def _active_tape():
    return getattr(_state, "tape", None)


class Tape:
    """Append-only record of executed ops, single-threaded by construction."""

    def __init__(self):
        self.nodes = []  # list of (out Tensor, pullback fn)

    def __enter__(self):
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(getattr(_state, "tape", None))
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = _state.stack.pop()
        return False


@contextmanager
def no_grad():
    """Suspend recording; ops inside produce constant tensors."""
    if not hasattr(_state, "stack"):
        _state.stack = []
    _state.stack.append(getattr(_state, "tape", None))
    _state.tape = None
    try:
        yield
    finally:
        _state.tape = _state.stack.pop()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        t = Tensor(self.data)
        return t

    def backward(self):
        backward(self)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # operator sugar; heavy lifting lives in the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(out_data, inputs, pullback):
    """Wrap an op result; record it if a tape is active and any input needs grad."""
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape.nodes.append((out, pullback))
    return out


def backward(loss: Tensor):
    """Reverse pass from a scalar loss over the tape it was recorded on."""
    if loss.data.ndim != 0:
        raise ValueError(f"backward requires a scalar, got shape {loss.data.shape}")
    tape = loss._tape
    if tape is None:
        raise ValueError("backward: tensor is not connected to an active tape")
    loss._accumulate(np.ones((), dtype=np.float64))
    for out, pull in reversed(tape.nodes):
        if out.grad is not None:
            pull(out.grad)


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def pull(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), pull)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def pull(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), pull)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def pull(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), pull)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(f"matmul requires >=2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul: inner dimensions disagree: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def pull(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _make(out_data, (a, b), pull)


def relu(x):
    x = _as_tensor(x)
    keep = x.data > 0
    out_data = np.where(keep, x.data, 0.0)

    def pull(g):
        if x.requires_grad:
            x._accumulate(g * keep)

    return _make(out_data, (x,), pull)


# ------------------------------------------------------------ shape plumbing


def reshape(x, shape):
    x = _as_tensor(x)
    out_data = x.data.reshape(shape)

    def pull(g):
        if x.requires_grad:
            x._accumulate(g.reshape(x.data.shape))

    return _make(out_data, (x,), pull)


def transpose(x, axes):
    x = _as_tensor(x)
    out_data = np.transpose(x.data, axes)
    inv = np.argsort(axes)

    def pull(g):
        if x.requires_grad:
            x._accumulate(np.transpose(g, inv))

    return _make(out_data, (x,), pull)


def concat(parts, axis=0):
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat of an empty list")
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def pull(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p._accumulate(g[tuple(idx)])

    return _make(out_data, tuple(parts), pull)


def embedding_lookup(table, indices):
    """Gather rows of a 2-d table; gradient scatter-adds into the table."""
    table = _as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    if table.data.ndim != 2:
        raise ValueError(f"embedding_lookup expects a 2-d table, got {table.data.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise IndexError(
            f"embedding_lookup: index out of range for table with {table.data.shape[0]} rows"
        )
    out_data = table.data[idx]

    def pull(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, idx, g)

    return _make(out_data, (table,), pull)


# --------------------------------------------------------------- reductions


def mean(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    out_data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else x.data.shape[axis]

    def pull(g):
        if x.requires_grad:
            if axis is None:
                x._accumulate(np.full_like(x.data, 1.0 / count) * g)
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                x._accumulate(np.broadcast_to(gg, x.data.shape) / count)

    return _make(out_data, (x,), pull)


def sum_(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def pull(g):
        if x.requires_grad:
            if axis is None:
                x._accumulate(np.broadcast_to(g, x.data.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                x._accumulate(np.broadcast_to(gg, x.data.shape).copy())

    return _make(out_data, (x,), pull)


# ------------------------------------------------------- normalizing layers


def softmax(x):
    """Numerically stable softmax over the last axis (max subtraction)."""
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def pull(g):
        if x.requires_grad:
            dot = (g * y).sum(axis=-1, keepdims=True)
            x._accumulate((g - dot) * y)

    return _make(y, (x,), pull)


def layernorm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then scale + shift."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ValueError(
            f"layernorm: gain/bias shapes {gain.data.shape}/{bias.data.shape} "
            f"do not match feature dim {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data

    def pull(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            x._accumulate((gx - m1 - xhat * m2) * inv)

    return _make(out_data, (x, gain, bias), pull)


def softmax_cross_entropy(logits, targets):
    """Mean cross-entropy of integer targets under softmax(logits).

    logits: (N, V); targets: (N,) ints in [0, V).  Stable via max subtraction.
    """
    logits = _as_tensor(logits)
    t = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2:
        raise ValueError(f"softmax_cross_entropy expects (N, V) logits, got {logits.data.shape}")
    n, v = logits.data.shape
    if t.shape != (n,):
        raise ValueError(f"softmax_cross_entropy: {t.shape} targets for {n} logit rows")
    if n == 0:
        raise ValueError("softmax_cross_entropy over zero positions")
    if t.min() < 0 or t.max() >= v:
        raise IndexError(f"softmax_cross_entropy: target outside [0, {v})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    ll = z[np.arange(n), t] - lse[:, 0]
    out_data = -ll.mean()

    def pull(g):
        if logits.requires_grad:
            p = np.exp(z - lse)
            p[np.arange(n), t] -= 1.0
            logits._accumulate(p * (g / n))

    return _make(out_data, (logits,), pull)


# ----------------------------------------------------------------- seeding


def splitmix64(x: int) -> int:
    """One splitmix64 step; used to derive stable child seeds from labels."""
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def seed_for(seed: int, label: str) -> int:
    """Deterministic 64-bit child seed for (seed, label)."""
    h = splitmix64(seed & 0xFFFFFFFFFFFFFFFF)
    for b in label.encode("utf-8"):
        h = splitmix64(h ^ b)
    return h


def rng_for(seed: int, label: str) -> np.random.Generator:
    """Named random stream, reproducible from a single run seed."""
    return np.random.default_rng(seed_for(seed, label))
