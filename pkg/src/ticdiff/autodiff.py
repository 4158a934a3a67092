"""Minimal reverse-mode differentiation over float64 numpy arrays.

Just enough machinery for a small transformer: each `Var` wraps an
ndarray and remembers how to push a cotangent back to its parents.
Graphs here are a few hundred nodes, so there is no requires-grad
tracking and no tape reuse; `backward` walks one graph once.
"""

import numpy as np
from scipy import special

__all__ = ["Var", "backward"]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Var:
    __slots__ = ("data", "grad", "parents", "vjp")

    def __init__(self, data, parents=(), vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.vjp = vjp

    # -- elementwise --------------------------------------------------

    def __add__(self, other):
        other = _wrap(other)
        return Var(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, self.data.shape), _unbroadcast(g, other.data.shape)),
        )

    def __sub__(self, other):
        other = _wrap(other)
        return Var(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, self.data.shape), _unbroadcast(-g, other.data.shape)),
        )

    def __mul__(self, other):
        other = _wrap(other)
        return Var(
            self.data * other.data,
            (self, other),
            lambda g: (
                _unbroadcast(g * other.data, self.data.shape),
                _unbroadcast(g * self.data, other.data.shape),
            ),
        )

    def __truediv__(self, other):
        other = _wrap(other)
        return Var(
            self.data / other.data,
            (self, other),
            lambda g: (
                _unbroadcast(g / other.data, self.data.shape),
                _unbroadcast(-g * self.data / other.data**2, other.data.shape),
            ),
        )

    def __neg__(self):
        return Var(-self.data, (self,), lambda g: (-g,))

    def __matmul__(self, other):
        # 2-d or batched 3-d with equal leading dims; no batch broadcasting.
        other = _wrap(other)
        return Var(
            self.data @ other.data,
            (self, other),
            lambda g: (
                g @ other.data.swapaxes(-1, -2),
                self.data.swapaxes(-1, -2) @ g,
            ),
        )

    __radd__ = __add__
    __rmul__ = __mul__

    # -- shape ---------------------------------------------------------

    def reshape(self, *shape):
        old = self.data.shape
        return Var(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    def swapaxes(self, a, b):
        return Var(self.data.swapaxes(a, b), (self,), lambda g: (g.swapaxes(a, b),))

    def sum(self, axis=None, keepdims=False):
        shape = self.data.shape

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, shape).copy(),)

        return Var(self.data.sum(axis=axis, keepdims=keepdims), (self,), vjp)

    def rows(self, start, stop):
        """Contiguous row slice along axis 0."""
        shape = self.data.shape

        def vjp(g):
            out = np.zeros(shape)
            out[start:stop] = g
            return (out,)

        return Var(self.data[start:stop], (self,), vjp)

    def take_rows(self, idx):
        """Row gather along axis 0 by an integer index array."""
        idx = np.asarray(idx, dtype=np.int64)
        shape = self.data.shape

        def vjp(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)

        return Var(self.data[idx], (self,), vjp)


def _wrap(x):
    return x if isinstance(x, Var) else Var(x)


def concat_rows(a: Var, b: Var) -> Var:
    na = a.data.shape[0]
    return Var(
        np.concatenate([a.data, b.data], axis=0),
        (a, b),
        lambda g: (g[:na], g[na:]),
    )


def exp(a: Var) -> Var:
    out = np.exp(a.data)
    return Var(out, (a,), lambda g: (g * out,))


def erf(a: Var) -> Var:
    coef = 2.0 / np.sqrt(np.pi)
    return Var(special.erf(a.data), (a,), lambda g: (g * coef * np.exp(-a.data**2),))


def sqrt(a: Var) -> Var:
    out = np.sqrt(a.data)
    return Var(out, (a,), lambda g: (g * 0.5 / out,))


def softmax_rows(a: Var) -> Var:
    """Softmax over the last axis (max-shifted for stability)."""
    shifted = a - Var(a.data.max(axis=-1, keepdims=True))
    e = exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def backward(root: Var, seed: np.ndarray | None = None) -> None:
    """Accumulate gradients of `root` into every Var in its graph.

    `seed` defaults to ones, which for a scalar root means d(root)/d(x).
    """
    order: list[Var] = []
    visited: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))

    root.grad = np.ones_like(root.data) if seed is None else np.asarray(seed, dtype=np.float64)
    for node in reversed(order):
        if node.grad is None or node.vjp is None:
            continue
        for parent, g in zip(node.parents, node.vjp(node.grad)):
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += g
