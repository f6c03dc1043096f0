"""A small reverse-mode autodiff engine over numpy arrays.

Only the handful of operations needed by the encoder, the denoiser and the
quantizer are provided. Every op records a closure that maps the upstream
gradient onto its parents; ``Tensor.backward`` walks the graph in reverse
topological order.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        # never mutate in place: the incoming array may be shared with another node
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self):
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
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


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    """Sum g down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return Tensor(a.data + b.data, _parents=(a, b), _backward=backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return Tensor(a.data - b.data, _parents=(a, b), _backward=backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor(a.data * b.data, _parents=(a, b), _backward=backward)


def square(a):
    def backward(g):
        a._accumulate(2.0 * a.data * g)

    return Tensor(a.data * a.data, _parents=(a,), _backward=backward)


def matmul(x, w):
    """``x @ w`` for x of shape (..., n) and w of shape (n, m)."""
    x, w = as_tensor(x), as_tensor(w)
    if w.data.ndim != 2:
        raise ValueError("matmul expects a 2-D right operand")

    n, m = w.shape
    lead = x.shape[:-1]

    def backward(g):
        g2 = g.reshape(-1, m)
        if x.requires_grad:
            x._accumulate((g2 @ w.data.T).reshape(lead + (n,)))
        if w.requires_grad:
            w._accumulate(x.data.reshape(-1, n).T @ g2)

    out = (x.data.reshape(-1, n) @ w.data).reshape(lead + (m,))
    return Tensor(out, _parents=(x, w), _backward=backward)


def leaky_relu(a, slope=0.1):
    if not 0 <= slope < 1:
        raise ValueError("slope must lie in [0, 1)")
    mask = a.data > 0

    def backward(g):
        out = g * slope
        np.copyto(out, g, where=mask)
        a._accumulate(out)

    return Tensor(np.maximum(a.data, slope * a.data), _parents=(a,), _backward=backward)


def max_over(a, axis):
    """Max along ``axis``; the gradient goes to the lowest-index maximizer."""
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        a._accumulate(full)

    return Tensor(out, _parents=(a,), _backward=backward)


def sum_(a, axis=None):
    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape))
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return Tensor(a.data.sum(axis=axis), _parents=(a,), _backward=backward)


def mean(a, axis=None):
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis), 1.0 / n)


def reshape(a, shape):
    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return Tensor(a.data.reshape(shape), _parents=(a,), _backward=backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), _parents=tuple(tensors), _backward=backward)


def take_rows(table, idx):
    """Gather ``table[idx]`` for an integer index array; gradients scatter-add back."""
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, table.shape[-1]))
        table._accumulate(full)

    return Tensor(table.data[idx], _parents=(table,), _backward=backward)


def stop_gradient(a):
    return Tensor(as_tensor(a).data)


def straight_through(z, zq):
    """Forward value ``zq``; the gradient reaching the output flows to ``z`` unchanged."""
    z = as_tensor(z)

    def backward(g):
        z._accumulate(g)

    return Tensor(as_tensor(zq).data.copy(), _parents=(z,), _backward=backward)


def backward(loss, leaves):
    """Run reverse mode from ``loss`` and return a gradient array per named leaf.

    Leaves the loss does not depend on receive an exact zero array.
    """
    loss = as_tensor(loss)
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    for leaf in leaves.values():
        leaf.grad = None
    loss.backward()
    return {
        name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data))
        for name, leaf in leaves.items()
    }
