"""Minimal dense-tensor reverse-mode gradient engine.

Values are float64 numpy arrays of rank <= 3.  A Node wraps one value and,
when it participates in a differentiable graph, remembers how to push an
adjoint back to its parents.  The tape is implicit: each op links the output
Node to its inputs, and ``backward`` walks that graph once in reverse
topological order.

Masked attention uses a true -inf sentinel (``NEG_INF``); softmax maps those
entries to exactly zero and refuses slices that contain nothing else.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

# Sentinel for masked attention logits. Deliberately IEEE -inf, not the most
# negative finite float: exp(-inf) is exactly 0.
NEG_INF = float("-inf")

MAX_RANK = 3


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class DegenerateSliceError(ValueError):
    """A softmax slice contained only -inf entries."""


class ContractError(ValueError):
    """An op precondition (other than shape compatibility) was violated."""


def _as_array(value) -> np.ndarray:
    a = np.asarray(value, dtype=np.float64)
    if a.ndim > MAX_RANK:
        raise ShapeMismatchError(f"rank {a.ndim} exceeds supported rank {MAX_RANK}")
    return a


class Node:
    """A tensor enrolled in the computation graph.

    ``grad`` is populated only on leaf nodes with ``requires_grad``; interior
    adjoints live in a scratch dict during ``backward`` and are discarded.
    """

    __slots__ = ("value", "grad", "requires_grad", "_parents")

    def __init__(self, value, requires_grad: bool = False,
                 _parents: Sequence[tuple["Node", Callable[[np.ndarray], np.ndarray]]] = ()):
        self.value = _as_array(value)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = tuple(_parents)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Node(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; everything routes through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __sub__(self, other):
        return add(self, scalar_mul(other, -1.0))

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        self must be scalar (size 1) and finite.  Repeated calls without
        ``zero_grad`` add up: calling twice exactly doubles every grad.
        """
        if self.value.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.value.shape}")
        if not np.isfinite(self.value).all():
            raise ContractError("backward() called on a non-finite loss")

        order: list[Node] = []
        seen: set[int] = set()
        stack: list[tuple[Node, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        adjoint: dict[int, np.ndarray] = {id(self): np.ones_like(self.value)}
        for node in reversed(order):
            g = adjoint.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and not node._parents:
                if node.grad is None:
                    node.grad = np.zeros_like(node.value)
                node.grad += g
            for parent, vjp in node._parents:
                if not parent.requires_grad:
                    continue
                contrib = vjp(g)
                key = id(parent)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + contrib
                else:
                    adjoint[key] = contrib


def constant(value) -> Node:
    return Node(value, requires_grad=False)


def parameter(value) -> Node:
    return Node(value, requires_grad=True)


def _wrap(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum an adjoint down to the shape a broadcast operand actually had."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _make(value: np.ndarray, parents) -> Node:
    live = [(p, vjp) for p, vjp in parents if p.requires_grad]
    return Node(value, requires_grad=bool(live), _parents=live)


def add(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    try:
        out = a.value + b.value
    except ValueError:
        raise ShapeMismatchError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
    return _make(out, [(a, lambda g: _unbroadcast(g, a.shape)),
                       (b, lambda g: _unbroadcast(g, b.shape))])


def mul(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    try:
        out = a.value * b.value
    except ValueError:
        raise ShapeMismatchError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")
    return _make(out, [(a, lambda g: _unbroadcast(g * b.value, a.shape)),
                       (b, lambda g: _unbroadcast(g * a.value, b.shape))])


def scalar_mul(a, c: float) -> Node:
    a = _wrap(a)
    c = float(c)
    return _make(a.value * c, [(a, lambda g: g * c)])


def matmul(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.value @ b.value
    return _make(out, [(a, lambda g: g @ b.value.T),
                       (b, lambda g: a.value.T @ g)])


def transpose(a) -> Node:
    a = _wrap(a)
    if a.value.ndim != 2:
        raise ShapeMismatchError(f"transpose: expected rank 2, got shape {a.shape}")
    return _make(a.value.T.copy(), [(a, lambda g: g.T)])


def reshape(a, shape) -> Node:
    a = _wrap(a)
    shape = tuple(int(s) for s in shape)
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeMismatchError(f"reshape: cannot view shape {old} as {shape}")
    return _make(out.copy(), [(a, lambda g: g.reshape(old))])


def concat(nodes: Sequence, axis: int = 0) -> Node:
    nodes = [_wrap(n) for n in nodes]
    if not nodes:
        raise ContractError("concat: need at least one input")
    try:
        out = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError:
        raise ShapeMismatchError(
            f"concat: incompatible shapes {[n.shape for n in nodes]} on axis {axis}")
    parents = []
    offset = 0
    for n in nodes:
        extent = n.shape[axis]
        lo = offset

        def vjp(g, axis=axis, lo=lo, hi=lo + extent):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        parents.append((n, vjp))
        offset += extent
    return _make(out, parents)


def slice_axis(a, axis: int, start: int, stop: int, step: int = 1) -> Node:
    a = _wrap(a)
    index = [slice(None)] * a.value.ndim
    index[axis] = slice(start, stop, step)
    index = tuple(index)
    out = a.value[index].copy()

    def vjp(g):
        full = np.zeros_like(a.value)
        full[index] = g
        return full

    return _make(out, [(a, vjp)])


def sum_axis(a, axis: int | None = None, keepdims: bool = False) -> Node:
    a = _wrap(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.full_like(a.value, float(g))
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.value.shape).copy()

    return _make(out, [(a, vjp)])


def relu(a) -> Node:
    a = _wrap(a)
    out = np.maximum(a.value, 0.0)
    return _make(out, [(a, lambda g: g * (a.value > 0.0))])


def sigmoid(a) -> Node:
    a = _wrap(a)
    out = 1.0 / (1.0 + np.exp(-a.value))
    return _make(out, [(a, lambda g: g * out * (1.0 - out))])


def tanh(a) -> Node:
    a = _wrap(a)
    out = np.tanh(a.value)
    return _make(out, [(a, lambda g: g * (1.0 - out * out))])


def log(a) -> Node:
    a = _wrap(a)
    if np.any(a.value <= 0.0):
        raise ContractError("log: input must be strictly positive")
    out = np.log(a.value)
    return _make(out, [(a, lambda g: g / a.value)])


def power(a, p: float) -> Node:
    a = _wrap(a)
    p = float(p)
    out = np.power(a.value, p)
    return _make(out, [(a, lambda g: g * p * np.power(a.value, p - 1.0))])


def clip(a, lo: float, hi: float) -> Node:
    """Clamp values; gradient passes only where the clamp is inactive."""
    a = _wrap(a)
    out = np.clip(a.value, lo, hi)
    inside = (a.value > lo) & (a.value < hi)
    return _make(out, [(a, lambda g: g * inside)])


def softmax(a, axis: int) -> Node:
    """Numerically stabilized softmax along ``axis``.

    -inf entries map to exactly 0; a slice that is entirely -inf raises
    DegenerateSliceError (callers are responsible for never producing one).
    """
    a = _wrap(a)
    v = a.value
    m = np.max(v, axis=axis, keepdims=True)
    if not np.isfinite(m).all():
        raise DegenerateSliceError(f"softmax: a slice along axis {axis} is entirely -inf")
    e = np.exp(v - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return out * (g - inner)

    return _make(out, [(a, vjp)])


def layer_norm(a, gamma, beta, axis: int = 0, eps: float = 1e-5) -> Node:
    """Normalize ``a`` to zero mean / unit variance along ``axis``, then apply
    the learnable affine (gamma, beta).  Composed from primitives so the
    backward pass is inherited."""
    a, gamma, beta = _wrap(a), _wrap(gamma), _wrap(beta)
    n = a.shape[axis]
    mean = scalar_mul(sum_axis(a, axis=axis, keepdims=True), 1.0 / n)
    centered = a - mean
    var = scalar_mul(sum_axis(mul(centered, centered), axis=axis, keepdims=True), 1.0 / n)
    inv_std = power(add(var, eps * np.ones(var.shape)), -0.5)
    normalized = mul(centered, inv_std)
    return add(mul(normalized, gamma), beta)


def mean_all(a) -> Node:
    a = _wrap(a)
    return scalar_mul(sum_axis(a), 1.0 / a.value.size)
