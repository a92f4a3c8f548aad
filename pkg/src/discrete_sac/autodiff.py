"""Reverse-mode differentiation over a small fixed vocabulary of array ops.

Only what the SAC losses need: matmul, add/sub/mul, relu, tanh, exp,
log-softmax, gather, square, sum/mean, elementwise min/max, clip and
stop-gradient. Values are float64 numpy arrays.
"""

from __future__ import annotations

import itertools

import numpy as np

_counter = itertools.count()


class Var:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "_seq")
    # make ndarray <op> Var dispatch to Var's reflected operators
    __array_ufunc__ = None

    def __init__(self, value, requires_grad: bool = False, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        # creation order is a topological order: parents always exist first
        self._seq = next(_counter) if requires_grad else -1

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var({self.value!r}, requires_grad={self.requires_grad})"

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


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _node(value, parents, backward) -> Var:
    for p in parents:
        if p.requires_grad:
            return Var(value, True, parents, backward)
    return Var(value)


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.value + b.value, (a, b), bw)


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.value - b.value, (a, b), bw)


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def bw(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _node(a.value * b.value, (a, b), bw)


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)

    def bw(g):
        ga = g @ b.value.T if a.requires_grad else None
        gb = a.value.T @ g if b.requires_grad else None
        return ga, gb

    return _node(a.value @ b.value, (a, b), bw)


def relu(x) -> Var:
    x = as_var(x)
    mask = x.value > 0
    return _node(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def tanh(x) -> Var:
    x = as_var(x)
    y = np.tanh(x.value)
    return _node(y, (x,), lambda g: (g * (1.0 - y * y),))


def exp(x) -> Var:
    x = as_var(x)
    y = np.exp(x.value)
    return _node(y, (x,), lambda g: (g * y,))


def log_softmax(x, axis: int = -1) -> Var:
    x = as_var(x)
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    p = np.exp(y)
    return _node(y, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def gather(x, index) -> Var:
    """Pick ``x[i, index[i]]`` for each row i."""
    x = as_var(x)
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(x.shape[0])

    def bw(g):
        out = np.zeros_like(x.value)
        out[rows, index] = g
        return (out,)

    return _node(x.value[rows, index], (x,), bw)


def square(x) -> Var:
    x = as_var(x)
    return _node(x.value * x.value, (x,), lambda g: (2.0 * x.value * g,))


def sum(x, axis=None) -> Var:  # noqa: A001
    x = as_var(x)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _node(x.value.sum(axis=axis), (x,), bw)


def mean(x, axis=None) -> Var:
    x = as_var(x)
    n = x.value.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


def minimum(a, b) -> Var:
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = as_var(a), as_var(b)
    pick_a = a.value <= b.value

    def bw(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return _node(np.where(pick_a, a.value, b.value), (a, b), bw)


def maximum(a, b) -> Var:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = as_var(a), as_var(b)
    pick_a = a.value >= b.value

    def bw(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return _node(np.where(pick_a, a.value, b.value), (a, b), bw)


def clip(x, lo: float, hi: float) -> Var:
    x = as_var(x)
    inside = (x.value >= lo) & (x.value <= hi)
    return _node(np.clip(x.value, lo, hi), (x,), lambda g: (g * inside,))


def stop_gradient(x) -> Var:
    return Var(as_var(x).value)


class NoRecordedForward(RuntimeError):
    pass


def backward_var(loss: Var) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if not isinstance(loss, Var):
        raise NoRecordedForward("backward needs a Var produced by a recorded forward pass")
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    reachable = {id(loss): loss}
    stack = [loss]
    while stack:
        for p in stack.pop()._parents:
            if p.requires_grad and id(p) not in reachable:
                reachable[id(p)] = p
                stack.append(p)
    order = sorted(reachable.values(), key=lambda v: v._seq)

    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg
