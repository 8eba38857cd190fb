"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations performed while a :class:`Tape` is active and touching a tensor
that requires gradients are appended to that tape. ``Tape.backward`` then
walks the recorded nodes in exact reverse creation order; gradients are
summed wherever a tensor fans out.
"""

from __future__ import annotations

import os
import threading

import numpy as np

from ..errors import ShapeError

_local = threading.local()
DEBUG = bool(os.environ.get("AVPGATE_DEBUG"))


def _active_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if g.shape != self.data.shape:
            g = _unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)


class Tape:
    """Append-only record of differentiable operations."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def record(self, out, backward):
        out.requires_grad = True
        out._backward = backward
        self.nodes.append(out)

    def backward(self, loss):
        if loss.data.size != 1 or loss.data.ndim > 1:
            raise ShapeError(f"backward needs a scalar root, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)


def backward(tape, loss, params=None):
    """Run reverse mode and return ``{name: grad}`` for ``params``.

    Parameters that did not influence ``loss`` get a zero gradient.
    """
    tape.backward(loss)
    if params is None:
        return None
    return {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(data, parents, backward):
    if DEBUG:
        assert np.isfinite(data).all(), "non-finite value produced"
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        tape.record(out, backward)
    return out


# elementwise ---------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(g)
    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(-g)
    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(g * b.data)
        if b.requires_grad:
            b._accum(g * a.data)
    return _make(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(g / b.data)
        if b.requires_grad:
            b._accum(-g * a.data / (b.data * b.data))
    return _make(a.data / b.data, (a, b), bw)


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: a._accum(-g))


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: a._accum(g * y))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: a._accum(g / a.data))


def sqrt(a):
    a = as_tensor(a)
    y = np.sqrt(a.data)
    return _make(y, (a,), lambda g: a._accum(g * 0.5 / y))


def square(a):
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: a._accum(2.0 * g * a.data))


def power(a, k):
    """``a ** k`` for a constant exponent ``k``."""
    a = as_tensor(a)
    if k == 0:
        return Tensor(np.ones_like(a.data))
    return _make(a.data ** k, (a,), lambda g: a._accum(g * k * a.data ** (k - 1)))


def sigmoid(a):
    a = as_tensor(a)
    y = _sigmoid(a.data)
    return _make(y, (a,), lambda g: a._accum(g * y * (1.0 - y)))


def tanh(a):
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: a._accum(g * (1.0 - y * y)))


def relu(a):
    """max(0, x); the subgradient at exactly 0 is taken as 0."""
    a = as_tensor(a)
    on = a.data > 0
    return _make(np.where(on, a.data, 0.0), (a,), lambda g: a._accum(g * on))


def maximum(a, b):
    """Elementwise max; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data >= b.data

    def bw(g):
        if a.requires_grad:
            a._accum(g * pick_a)
        if b.requires_grad:
            b._accum(g * ~pick_a)
    return _make(np.where(pick_a, a.data, b.data), (a, b), bw)


def clamp(a, lo=None, hi=None):
    a = as_tensor(a)
    y = np.clip(a.data, lo, hi)
    inside = y == a.data
    return _make(y, (a,), lambda g: a._accum(g * inside))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# reductions and shape ------------------------------------------------------

def sum(a, axis=None, keepdims=False):  # noqa: A001
    a = as_tensor(a)
    y = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.data.shape))
    return _make(y, (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.data.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: a._accum(g.reshape(a.data.shape)))


def transpose(a, axes=None):
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: a._accum(np.transpose(g, inv)))


def getitem(a, idx):
    a = as_tensor(a)
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(p, (slice, int, type(None), type(Ellipsis))) for p in parts)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        a._accum(full)
    return _make(a.data[idx], (a,), bw)


def concat(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    y = np.concatenate([t.data for t in ts], axis=axis)
    ax = axis % y.ndim
    bounds = np.cumsum([0] + [t.data.shape[ax] for t in ts])

    def bw(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                t._accum(g[tuple(sl)])
    return _make(y, ts, bw)


def stack(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    y = np.stack([t.data for t in ts], axis=axis)

    def bw(g):
        for k, t in enumerate(ts):
            if t.requires_grad:
                t._accum(np.take(g, k, axis=axis))
    return _make(y, ts, bw)


# linear algebra ------------------------------------------------------------

def matmul(a, b):
    """``a @ b`` for a of shape (..., n) and b of shape (n, m) or matching batch."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")
    y = a.data @ b.data

    def bw(g):
        if b.ndim == 1:
            if a.requires_grad:
                a._accum(np.multiply.outer(g, b.data))
            if b.requires_grad:
                b._accum(np.tensordot(a.data, g, axes=(tuple(range(a.ndim - 1)), tuple(range(g.ndim)))))
            return
        if a.requires_grad:
            a._accum(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            if a.ndim == 1:
                b._accum(np.multiply.outer(a.data, g))
            elif b.ndim == 2 and a.ndim > 2:
                a2 = a.data.reshape(-1, a.data.shape[-1])
                b._accum(a2.T @ g.reshape(-1, g.shape[-1]))
            else:
                b._accum(np.swapaxes(a.data, -1, -2) @ g)
    return _make(y, (a, b), bw)


def dot(a, b):
    return sum(mul(a, b))


# softmax family ------------------------------------------------------------

def softmax(a, axis=-1, mask=None):
    """Softmax along ``axis``; entries where ``mask`` is 0 get weight exactly 0."""
    a = as_tensor(a)
    x = a.data
    if mask is not None:
        x = np.where(mask > 0, x, -np.inf)
    x = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(x)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        a._accum(y * (g - (g * y).sum(axis=axis, keepdims=True)))
    return _make(y, (a,), bw)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    x = a.data - np.max(a.data, axis=axis, keepdims=True)
    lse = np.log(np.exp(x).sum(axis=axis, keepdims=True))
    y = x - lse
    p = np.exp(y)

    def bw(g):
        a._accum(g - p * g.sum(axis=axis, keepdims=True))
    return _make(y, (a,), bw)


def logsumexp(a, axis=-1):
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    s = np.exp(a.data - m)
    tot = s.sum(axis=axis, keepdims=True)
    y = (m + np.log(tot)).squeeze(axis)
    p = s / tot

    def bw(g):
        a._accum(np.expand_dims(g, axis) * p)
    return _make(y, (a,), bw)
