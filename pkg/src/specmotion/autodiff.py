"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Just enough machinery for the noise-prediction network: broadcasting
arithmetic, matmul, shape ops, concat/narrow, last-axis softmax, a smooth
GELU, and scalar reductions. Graphs are built eagerly; when no input
requires gradients an op returns a plain constant node, so inference pays
almost nothing for the tape. Gradient accumulation follows the fixed graph
construction order, which keeps repeated runs bit-for-bit identical.
"""

from __future__ import annotations

import numpy as np

_GELU_C = 0.7978845608028654  # sqrt(2 / pi)
_GELU_A = 0.044715


class Tensor:
    """Node in the computation graph wrapping a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every requires_grad leaf."""
        if self.data.ndim != 0:
            raise ValueError("backward() requires a scalar root")
        self.grad = np.ones_like(self.data)
        for node in _toposort(self):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _toposort(root: Tensor) -> list[Tensor]:
    # Post-order DFS, reversed: root first, every node before its parents.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad:
                stack.append((parent, False))
    order.reverse()
    return order


def _acc(node: Tensor, g: np.ndarray) -> None:
    # Copy on first assignment: pass-through ops (add, reshape) would otherwise
    # alias one upstream array into several .grad fields.
    node.grad = np.array(g) if node.grad is None else node.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out axes that numpy broadcasting added or expanded."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if squeeze:
        g = g.sum(axis=squeeze, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    if not (a.requires_grad or b.requires_grad):
        return Tensor(out)

    def bw(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(g, b.data.shape))

    return Tensor(out, True, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    if not (a.requires_grad or b.requires_grad):
        return Tensor(out)

    def bw(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(-g, b.data.shape))

    return Tensor(out, True, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    if not (a.requires_grad or b.requires_grad):
        return Tensor(out)

    def bw(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out, True, (a, b), bw)


def scale(a: Tensor, s: float) -> Tensor:
    out = a.data * s
    if not a.requires_grad:
        return Tensor(out)

    def bw(g):
        _acc(a, g * s)

    return Tensor(out, True, (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = np.matmul(a.data, b.data)
    if not (a.requires_grad or b.requires_grad):
        return Tensor(out)

    def bw(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _acc(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _acc(b, _unbroadcast(gb, b.data.shape))

    return Tensor(out, True, (a, b), bw)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = a.data.transpose(axes)
    if not a.requires_grad:
        return Tensor(out)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        _acc(a, g.transpose(inverse))

    return Tensor(out, True, (a,), bw)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = a.data.reshape(shape)
    if not a.requires_grad:
        return Tensor(out)
    original = a.data.shape

    def bw(g):
        _acc(a, g.reshape(original))

    return Tensor(out, True, (a,), bw)


def concat(parts: list[Tensor], axis: int = -1) -> Tensor:
    out = np.concatenate([p.data for p in parts], axis=axis)
    if not any(p.requires_grad for p in parts):
        return Tensor(out)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            if p.requires_grad:
                _acc(p, piece)

    return Tensor(out, True, tuple(parts), bw)


def narrow(a: Tensor, axis: int, start: int, size: int) -> Tensor:
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + size)
    index = tuple(index)
    out = a.data[index]
    if not a.requires_grad:
        return Tensor(out)

    def bw(g):
        full = np.zeros_like(a.data)
        full[index] = g
        _acc(a, full)

    return Tensor(out, True, (a,), bw)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by max subtraction."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    if not a.requires_grad:
        return Tensor(out)

    def bw(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        _acc(a, out * (g - inner))

    return Tensor(out, True, (a,), bw)


def gelu(a: Tensor) -> Tensor:
    """Smooth GELU, tanh form:  0.5 x (1 + tanh(c (x + a x^3)))."""
    x = a.data
    inner = _GELU_C * (x + _GELU_A * x ** 3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)
    if not a.requires_grad:
        return Tensor(out)

    def bw(g):
        sech2 = 1.0 - th ** 2
        d = 0.5 * (1.0 + th) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3.0 * _GELU_A * x ** 2)
        _acc(a, g * d)

    return Tensor(out, True, (a,), bw)


def mean_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.mean())
    if not a.requires_grad:
        return Tensor(out)
    n = a.data.size
    shape = a.data.shape

    def bw(g):
        _acc(a, np.full(shape, float(g) / n))

    return Tensor(out, True, (a,), bw)
