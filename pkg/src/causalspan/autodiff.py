"""Reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor wraps an ndarray and remembers how it was produced; calling
``backward()`` on a scalar walks the recorded graph in reverse topological
order and accumulates gradients into every Tensor with ``requires_grad``.
Everything runs at 64-bit precision so analytic gradients can be compared
against central finite differences down to ~1e-6 relative error.

Only the operations the model needs are implemented. Each backward rule is
local and is unit-tested against ``numerical_grad``.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "as_tensor", "add", "sub", "mul", "neg", "linear", "tanh",
    "sigmoid", "exp", "log", "concat", "stack", "narrow", "reshape",
    "broadcast_to", "gather_rows", "select_last", "sum_", "mean_",
    "log_softmax", "softmax", "numerical_grad",
]


class Tensor:
    """A float64 array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    # Make `ndarray <op> Tensor` defer to the Tensor's reflected operator
    # instead of numpy's elementwise coercion.
    __array_ufunc__ = None

    def __init__(self, value, requires_grad=False, _parents=(), _backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        # Drop graph edges when no parent needs gradients: keeps inference cheap.
        if self.requires_grad and _backward is not None:
            self._parents = _parents
            self._backward = _backward
        else:
            self._parents = ()
            self._backward = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def accumulate(self, g):
        self.grad = g if self.grad is None else self.grad + g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Backpropagate from this scalar through the recorded graph."""
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))
        self.accumulate(np.ones_like(self.value))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting introduced."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value + b.value)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.value.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.value.shape))

    return _with_backward(out, (a, b), backward)


def _with_backward(out, parents, backward):
    # Re-attach the closure only when some parent tracks gradients.
    if any(p.requires_grad for p in parents):
        out._parents = parents
        out._backward = backward
        out.requires_grad = True
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value - b.value)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.value.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.value.shape))

    return _with_backward(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.value * b.value)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.value, a.value.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.value, b.value.shape))

    return _with_backward(out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.value)

    def backward(g):
        a.accumulate(-g)

    return _with_backward(out, (a,), backward)


def linear(x, w) -> Tensor:
    """Matrix product ``x @ w`` with x of shape (..., in) and w of (in, out)."""
    x, w = as_tensor(x), as_tensor(w)
    out = Tensor(np.matmul(x.value, w.value))

    def backward(g):
        if x.requires_grad:
            x.accumulate(np.matmul(g, w.value.T))
        if w.requires_grad:
            n_in, n_out = w.value.shape
            x2 = x.value.reshape(-1, n_in)
            g2 = g.reshape(-1, n_out)
            w.accumulate(x2.T @ g2)

    return _with_backward(out, (x, w), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    v = np.tanh(a.value)
    out = Tensor(v)

    def backward(g):
        a.accumulate(g * (1.0 - v * v))

    return _with_backward(out, (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # exp(-logaddexp(0, -x)) is stable for any finite x.
    v = np.exp(-np.logaddexp(0.0, -a.value))
    out = Tensor(v)

    def backward(g):
        a.accumulate(g * v * (1.0 - v))

    return _with_backward(out, (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    v = np.exp(a.value)
    out = Tensor(v)

    def backward(g):
        a.accumulate(g * v)

    return _with_backward(out, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.value))

    def backward(g):
        a.accumulate(g / a.value)

    return _with_backward(out, (a,), backward)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.value for t in tensors], axis=axis))
    sizes = [t.value.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t.accumulate(piece)

    return _with_backward(out, tuple(tensors), backward)


def stack(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.value for t in tensors], axis=axis))

    def backward(g):
        pieces = np.split(g, len(tensors), axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t.accumulate(np.squeeze(piece, axis=axis))

    return _with_backward(out, tuple(tensors), backward)


def narrow(a, start, length, axis=-1) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    a = as_tensor(a)
    index = [slice(None)] * a.value.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = Tensor(a.value[index])

    def backward(g):
        full = np.zeros_like(a.value)
        full[index] = g
        a.accumulate(full)

    return _with_backward(out, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.value.reshape(shape))

    def backward(g):
        a.accumulate(g.reshape(a.value.shape))

    return _with_backward(out, (a,), backward)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.broadcast_to(a.value, shape))

    def backward(g):
        a.accumulate(_unbroadcast(g, a.value.shape))

    return _with_backward(out, (a,), backward)


def gather_rows(a, idx) -> Tensor:
    """Index the first axis with an integer array; duplicates accumulate."""
    a = as_tensor(a)
    idx = np.asarray(idx)
    out = Tensor(a.value[idx])

    def backward(g):
        full = np.zeros_like(a.value)
        np.add.at(full, idx, g)
        a.accumulate(full)

    return _with_backward(out, (a,), backward)


def select_last(a, idx) -> Tensor:
    """Pick one element along the last axis per leading position.

    ``idx`` has shape ``a.shape[:-1]``; the result drops the last axis.
    """
    a = as_tensor(a)
    idx = np.asarray(idx)
    expanded = np.expand_dims(idx, -1)
    out = Tensor(np.take_along_axis(a.value, expanded, axis=-1).squeeze(-1))

    def backward(g):
        full = np.zeros_like(a.value)
        np.put_along_axis(full, expanded, np.expand_dims(g, -1), axis=-1)
        a.accumulate(full)

    return _with_backward(out, (a,), backward)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.value.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.value.shape).copy())

    return _with_backward(out, (a,), backward)


def mean_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.value.size if axis is None else a.value.shape[axis]
    out = Tensor(a.value.mean(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.value.shape) / count)

    return _with_backward(out, (a,), backward)


def log_softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    m = a.value.max(axis=axis, keepdims=True)
    shifted = a.value - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    v = shifted - lse
    out = Tensor(v)

    def backward(g):
        a.accumulate(g - np.exp(v) * g.sum(axis=axis, keepdims=True))

    return _with_backward(out, (a,), backward)


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    m = a.value.max(axis=axis, keepdims=True)
    e = np.exp(a.value - m)
    v = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(v)

    def backward(g):
        a.accumulate(v * (g - (g * v).sum(axis=axis, keepdims=True)))

    return _with_backward(out, (a,), backward)


def numerical_grad(fn, arrays, eps=1e-5):
    """Central finite differences of scalar ``fn(*arrays)`` w.r.t. each array.

    Mutates and restores array entries in place; returns one gradient array
    per input. This is the independent oracle the op tests compare against.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = fn(*arrays)
            flat[i] = orig - eps
            lo = fn(*arrays)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads
