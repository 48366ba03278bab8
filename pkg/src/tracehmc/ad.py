"""Reverse-mode automatic differentiation on numpy values.

A :class:`Var` wraps a float or ndarray and records how it was computed.
Calling :func:`backward` on a scalar output propagates adjoints to every
leaf.  The elementwise helpers (:func:`exp`, :func:`log`, ...) accept plain
floats and arrays as well, so model code runs unchanged whether or not a
gradient is being recorded.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np
from scipy import special

_ids = itertools.count()

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class Var:
    """A node in the computation graph."""

    __slots__ = ("value", "parents", "id")
    __array_ufunc__ = None  # make ndarray defer to Var's reflected operators

    def __init__(self, value, parents: Sequence[tuple["Var", Callable]] = ()):
        self.value = value
        self.parents = tuple(parents)
        self.id = next(_ids)

    def __repr__(self) -> str:
        return f"Var({self.value!r})"

    @property
    def shape(self) -> tuple[int, ...]:
        return np.shape(self.value)

    def __float__(self) -> float:
        return float(self.value)

    # comparisons act on the primal value; branches are constants to AD
    def __lt__(self, other):
        return self.value < _primal(other)

    def __le__(self, other):
        return self.value <= _primal(other)

    def __gt__(self, other):
        return self.value > _primal(other)

    def __ge__(self, other):
        return self.value >= _primal(other)

    __hash__ = object.__hash__

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, power):
        return power_(self, power)

    def __abs__(self):
        return abs_(self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return sum_(self, axis)


def _primal(x):
    return x.value if isinstance(x, Var) else x


def _unbroadcast(grad, shape):
    grad = np.asarray(grad)
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _node(value, *pairs):
    parents = [(x, f) for x, f in pairs if isinstance(x, Var)]
    if not parents:
        return value
    return Var(value, parents)


def add(a, b):
    va, vb = _primal(a), _primal(b)
    sa, sb = np.shape(va), np.shape(vb)
    return _node(
        va + vb,
        (a, lambda g: _unbroadcast(g, sa)),
        (b, lambda g: _unbroadcast(g, sb)),
    )


def neg(a):
    if not isinstance(a, Var):
        return -a
    return Var(-a.value, [(a, lambda g: -g)])


def mul(a, b):
    va, vb = _primal(a), _primal(b)
    sa, sb = np.shape(va), np.shape(vb)
    return _node(
        va * vb,
        (a, lambda g: _unbroadcast(g * vb, sa)),
        (b, lambda g: _unbroadcast(g * va, sb)),
    )


def div(a, b):
    va, vb = _primal(a), _primal(b)
    sa, sb = np.shape(va), np.shape(vb)
    out = va / vb
    return _node(
        out,
        (a, lambda g: _unbroadcast(g / vb, sa)),
        (b, lambda g: _unbroadcast(-g * out / vb, sb)),
    )


def power_(a, k: float):
    if isinstance(k, Var):
        raise TypeError("only constant exponents are supported")
    va = _primal(a)
    out = va**k
    return _node(out, (a, lambda g: g * k * va ** (k - 1)))


def square(a):
    va = _primal(a)
    return _node(va * va, (a, lambda g: 2.0 * g * va))


def abs_(a):
    va = _primal(a)
    return _node(abs(va), (a, lambda g: g * np.sign(va)))


def exp(a):
    va = _primal(a)
    out = math.exp(va) if _is_scalar(va) else np.exp(va)
    return _node(out, (a, lambda g: g * out))


def log(a):
    """Natural log; a nonpositive scalar raises ``ValueError`` (a primitive failure)."""
    va = _primal(a)
    out = math.log(va) if _is_scalar(va) else np.log(va)
    return _node(out, (a, lambda g: g / va))


def log1p(a):
    va = _primal(a)
    out = math.log1p(va) if _is_scalar(va) else np.log1p(va)
    return _node(out, (a, lambda g: g / (1.0 + va)))


def sqrt(a):
    va = _primal(a)
    out = math.sqrt(va) if _is_scalar(va) else np.sqrt(va)
    return _node(out, (a, lambda g: 0.5 * g / out))


def ndtr(a):
    """Standard normal cdf."""
    va = _primal(a)
    out = _ndtr_scalar(va) if _is_scalar(va) else special.ndtr(va)
    return _node(out, (a, lambda g: g * np.exp(-0.5 * np.square(va) - _LOG_SQRT_2PI)))


def log_ndtr(a):
    """Log of the standard normal cdf, accurate far into the lower tail."""
    va = _primal(a)
    out = special.log_ndtr(va)
    if _is_scalar(va):
        out = float(out)
    # d/dx log Phi(x) = phi(x) / Phi(x), formed in log space
    return _node(out, (a, lambda g: g * np.exp(-0.5 * np.square(va) - _LOG_SQRT_2PI - out)))


def sum_(a, axis=None):
    va = _primal(a)
    out = np.sum(va, axis=axis)
    shape = np.shape(va)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape)

    return _node(out, (a, vjp))


def logsumexp(a, axis=None):
    va = _primal(a)
    out = special.logsumexp(va, axis=axis)
    shape = np.shape(va)

    def vjp(g):
        g, o = np.asarray(g), np.asarray(out)
        if axis is not None:
            g, o = np.expand_dims(g, axis), np.expand_dims(o, axis)
        return np.broadcast_to(g, shape) * np.exp(va - o)

    return _node(out, (a, vjp))


def getitem(a, idx):
    va = _primal(a)
    shape = np.shape(va)

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return out

    return _node(va[idx], (a, vjp))


def stack(items: Sequence, axis: int = 0):
    """Stack scalars or equal-shape arrays (any of which may be a Var)."""
    values = [_primal(x) for x in items]
    out = np.stack(values, axis=axis)
    pairs = []
    for i, x in enumerate(items):
        if isinstance(x, Var):
            pairs.append((x, lambda g, i=i: np.take(g, i, axis=axis)))
    if not pairs:
        return out
    return Var(out, pairs)


def reshape(a, shape):
    va = _primal(a)
    old = np.shape(va)
    return _node(np.reshape(va, shape), (a, lambda g: np.reshape(g, old)))


def _is_scalar(v) -> bool:
    return isinstance(v, (float, int, np.floating))


def _ndtr_scalar(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def backward(output: Var) -> dict[int, np.ndarray | float]:
    """Propagate adjoints from a scalar output; returns ``{var.id: gradient}``."""
    order: list[Var] = []
    seen: set[int] = set()
    stack_: list[tuple[Var, bool]] = [(output, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack_.append((node, True))
        for parent, _ in node.parents:
            if parent.id not in seen:
                stack_.append((parent, False))

    grads: dict[int, object] = {output.id: 1.0}
    for node in reversed(order):
        g = grads.get(node.id)
        if g is None:
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            prev = grads.get(parent.id)
            grads[parent.id] = contrib if prev is None else prev + contrib
    return grads


def grad(fn: Callable, x: Sequence[float]) -> np.ndarray:
    """Gradient of a scalar function of a 1-D point, for quick checks."""
    leaves = [Var(float(v)) for v in x]
    out = fn(leaves)
    if not isinstance(out, Var):
        return np.zeros(len(leaves))
    g = backward(out)
    return np.array([float(np.sum(g.get(v.id, 0.0))) for v in leaves])
