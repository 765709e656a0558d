"""Reverse-mode autodiff over float64 numpy arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure which pushes its gradient back to them. ``Tensor.backward`` runs the
closures in reverse topological order. Gradients accumulate, so reuse of a
tensor in several places (e.g. a generator applied twice) works as expected.
"""

import numpy as np

from .. import kernels
from ..errors import NumericError, ShapeError


def _as_array(data):
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(())
    return arr


def check_finite(arr, what="tensor"):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


class Tensor:
    """n-d real array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64).reshape(self.data.shape)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        """Back-propagate ``grad`` (defaults to ones for a scalar) through the graph."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = _as_array(grad)
        if grad.shape != self.data.shape:
            raise ShapeError(
                f"upstream gradient shape {grad.shape} does not match output {self.data.shape}",
                expected=self.data.shape,
                actual=grad.shape,
            )
        check_finite(grad, "upstream gradient")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior grads are transient; leaves keep theirs
                node.grad = None

    # operator sugar; only what the layers and losses need
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    a, b = _wrap(a), _wrap(b)

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), back)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), back)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), back)


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)

    def back(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), back)


def reshape(a, shape):
    a = _wrap(a)
    old = a.shape

    def back(g):
        a._accumulate(g.reshape(old))

    return _make(a.data.reshape(shape), (a,), back)


def total(a):
    a = _wrap(a)

    def back(g):
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(a.data.sum(), (a,), back)


def mean(a):
    a = _wrap(a)
    n = a.size

    def back(g):
        a._accumulate(np.broadcast_to(g / n, a.shape))

    return _make(a.data.mean(), (a,), back)


def relu(a):
    mask = a.data > 0

    def back(g):
        a._accumulate(g * mask)

    return _make(a.data * mask, (a,), back)


def sigmoid(a):
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def back(g):
        a._accumulate(g * out * (1.0 - out))

    return _make(out, (a,), back)


def tanh(a):
    out = np.tanh(a.data)

    def back(g):
        a._accumulate(g * (1.0 - out * out))

    return _make(out, (a,), back)


def log_clamped(a, eps=1e-7):
    """log(clip(a, eps, 1 - eps)); zero gradient where the clip is active."""
    clipped = np.clip(a.data, eps, 1.0 - eps)
    active = (a.data >= eps) & (a.data <= 1.0 - eps)

    def back(g):
        a._accumulate(g * active / clipped)

    return _make(np.log(clipped), (a,), back)


def abs_(a):
    sign = np.sign(a.data)

    def back(g):
        a._accumulate(g * sign)

    return _make(np.abs(a.data), (a,), back)


def power_norm(a):
    """Scale each sample (leading axis) so its mean squared symbol is 1."""
    flat = a.data.reshape(a.shape[0], -1)
    n = flat.shape[1]
    norms = np.linalg.norm(flat, axis=1)
    if np.any(norms == 0.0):
        raise NumericError("power_norm of an all-zero sample is undefined")
    # divide before scaling so subnormal samples do not overflow
    unit = flat / norms[:, None]
    out = (unit * np.sqrt(n)).reshape(a.shape)

    def back(g):
        gf = g.reshape(flat.shape)
        proj = np.sum(unit * gf, axis=1)
        gx = (gf - unit * proj[:, None]) * (np.sqrt(n) / norms)[:, None]
        a._accumulate(gx.reshape(a.shape))

    return _make(out, (a,), back)


def conv2d(x, w, b, stride=1, padding=0):
    out = kernels.conv2d_forward(x.data, w.data, b.data, stride, padding)

    def back(g):
        gx, gw, gb = kernels.conv2d_backward(x.data, w.data, g, stride, padding)
        if x.requires_grad:
            x._accumulate(gx)
        if w.requires_grad:
            w._accumulate(gw)
        if b.requires_grad:
            b._accumulate(gb)

    return _make(out, (x, w, b), back)


def straight_through(a, value):
    """Forward ``value`` in place of ``a``; gradient passes to ``a`` unchanged."""
    value = np.asarray(value, dtype=np.float64)

    def back(g):
        a._accumulate(g)

    return _make(value, (a,), back)
