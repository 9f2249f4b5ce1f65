"""Reverse-mode automatic differentiation over dense numpy arrays.

The graph is the tape: every operation returns a Tensor holding its parents
and a closure that routes the incoming gradient to them. backward() walks the
graph once in reverse topological order, so each recorded operation is
differentiated exactly once. All primitives are deterministic; identical
inputs give bit-identical outputs within one build.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operands with incompatible shapes, reported with both shapes."""


def _as_float_array(x, dtype=None):
    a = np.asarray(x, dtype=dtype)
    if a.dtype.kind != "f":
        a = a.astype(np.float64)
    return a


class Tensor:
    """A dense float array plus its position in the computation graph."""

    __slots__ = ("data", "grad", "_parents", "_bwd")

    def __init__(self, data, parents=(), bwd=None):
        self.data = data
        self.grad = None
        self._parents = parents
        self._bwd = bwd

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        """A constant with the same values, cut out of the graph."""
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        a, b = _lift_pair(self, other)
        return add(a, neg(b))

    def __rsub__(self, other):
        a, b = _lift_pair(other, self)
        return add(a, neg(b))

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    @property
    def T(self):
        return transpose(self)


def constant(x, dtype=None):
    """Wrap an array as a graph leaf that accumulates no gradient of its own."""
    return Tensor(_as_float_array(x, dtype))


def _lift(x):
    return x if isinstance(x, Tensor) else constant(x)


def _lift_pair(a, b):
    """Lift both operands; a bare Python scalar adopts the other side's dtype
    (numpy's weak-scalar rule) so float32 graphs are not promoted to float64."""
    if isinstance(a, Tensor) and isinstance(b, (int, float)):
        return a, constant(b, a.data.dtype)
    if isinstance(b, Tensor) and isinstance(a, (int, float)):
        return constant(a, b.data.dtype), b
    return _lift(a), _lift(b)


def _accumulate(t, g):
    # never in place: gradients may be shared between consumers
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    a, b = _lift_pair(a, b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.data.shape} with {b.data.shape}") from None

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return Tensor(out, (a, b), bwd)


def mul(a, b):
    a, b = _lift_pair(a, b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.data.shape} with {b.data.shape}") from None

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out, (a, b), bwd)


def neg(a):
    a = _lift(a)

    def bwd(g):
        _accumulate(a, -g)

    return Tensor(-a.data, (a,), bwd)


def div(a, b):
    a, b = _lift_pair(a, b)
    try:
        out = a.data / b.data
    except ValueError:
        raise ShapeError(f"div: cannot broadcast {a.data.shape} with {b.data.shape}") from None

    def bwd(g):
        _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-g * out / b.data, b.data.shape))

    return Tensor(out, (a, b), bwd)


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    out = a.data @ b.data

    def bwd(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return Tensor(out, (a, b), bwd)


def transpose(a):
    a = _lift(a)

    def bwd(g):
        _accumulate(a, g.T)

    return Tensor(a.data.T, (a,), bwd)


def reshape(a, shape):
    a = _lift(a)
    out = a.data.reshape(shape)

    def bwd(g):
        _accumulate(a, g.reshape(a.data.shape))

    return Tensor(out, (a,), bwd)


def concat(parts, axis=0):
    parts = [_lift(p) for p in parts]
    if not parts:
        raise ShapeError("concat: empty input list")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]

    def bwd(g):
        start = 0
        for p, s in zip(parts, sizes):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, start + s)
            _accumulate(p, g[tuple(index)])
            start += s

    return Tensor(out, tuple(parts), bwd)


def take(a, key):
    """Basic indexing (ints and slices); gradient scatters back into place."""
    a = _lift(a)
    out = a.data[key]

    def bwd(g):
        buf = np.zeros_like(a.data)
        buf[key] += g
        _accumulate(a, buf)

    return Tensor(out, (a,), bwd)


def softmax(a, axis=-1):
    a = _lift(a)
    x = a.data
    ax = axis % x.ndim
    moved = np.moveaxis(x, ax, -1)
    flat_shape = (-1, moved.shape[-1])
    y_flat = kernels.softmax_fwd(np.ascontiguousarray(moved).reshape(flat_shape))
    out = np.moveaxis(y_flat.reshape(moved.shape), -1, ax)

    def bwd(g):
        g_flat = np.ascontiguousarray(np.moveaxis(g, ax, -1)).reshape(flat_shape)
        gx = kernels.softmax_bwd(y_flat, g_flat)
        _accumulate(a, np.moveaxis(gx.reshape(moved.shape), -1, ax))

    return Tensor(out, (a,), bwd)


def sin(a):
    a = _lift(a)

    def bwd(g):
        _accumulate(a, g * np.cos(a.data))

    return Tensor(np.sin(a.data), (a,), bwd)


def cos(a):
    a = _lift(a)

    def bwd(g):
        _accumulate(a, -g * np.sin(a.data))

    return Tensor(np.cos(a.data), (a,), bwd)


def tanh(a):
    a = _lift(a)
    out = kernels.tanh_fwd(a.data)

    def bwd(g):
        _accumulate(a, kernels.tanh_bwd(out, g))

    return Tensor(out, (a,), bwd)


def gelu(a):
    a = _lift(a)
    out = kernels.gelu_fwd(a.data)

    def bwd(g):
        _accumulate(a, kernels.gelu_bwd(a.data, g))

    return Tensor(out, (a,), bwd)


def sqrt(a):
    a = _lift(a)
    out = np.sqrt(a.data)

    def bwd(g):
        _accumulate(a, g * (0.5 / out))

    return Tensor(out, (a,), bwd)


def sum_(a, axis=None, keepdims=False):
    a = _lift(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape))
            return
        gk = g if keepdims else np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(gk, a.data.shape))

    return Tensor(out, (a,), bwd)


def mean(a):
    a = _lift(a)
    out = a.data.mean()
    n = a.data.size

    def bwd(g):
        _accumulate(a, np.broadcast_to(g / n, a.data.shape))

    return Tensor(out, (a,), bwd)


def outer(u, v):
    """Outer product of two vectors, built from reshape and broadcast multiply."""
    u, v = _lift(u), _lift(v)
    if u.data.ndim != 1 or v.data.ndim != 1:
        raise ShapeError(f"outer: expected vectors, got {u.data.shape} and {v.data.shape}")
    return mul(reshape(u, (-1, 1)), reshape(v, (1, -1)))


def _toposort(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, ready = stack.pop()
        if ready:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss, store=None):
    """Differentiate a scalar loss through the recorded graph.

    With a ParameterStore, returns {name: gradient array} covering every
    registered parameter (zeros for parameters the loss never touched) and
    clears their grad slots for the next step. Without one, leaves gradients
    on the visited tensors for inspection.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._bwd is not None and node.grad is not None:
            node._bwd(node.grad)
    if store is None:
        return None
    grads = {}
    for name, p in store.items():
        grads[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.grad = None
    return grads
