"""Reverse-mode automatic differentiation over dense numpy arrays.

A ``Tensor`` wraps a C-contiguous float ndarray. Operations record a
backward closure and their parent tensors; ``backward()`` on a scalar
walks the graph once in reverse topological order and accumulates
gradients into every ``requires_grad`` ancestor. Gradients are plain
ndarrays, never part of the graph.

float32 is the training dtype; building graphs in float64 (for gradient
checks) works the same way because ops preserve the input dtype.
"""

from __future__ import annotations

import threading
from typing import Iterable

import numpy as np

from .errors import ShapeError

_state = threading.local()  # per-thread so concurrent runs cannot interfere


class no_grad:
    """Context manager that disables graph construction (thread-local)."""

    def __enter__(self):
        self._prev = grad_enabled()
        _state.enabled = False
        return self

    def __exit__(self, *exc):
        _state.enabled = self._prev
        return False


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


def _as_float_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    return np.ascontiguousarray(arr)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_float_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- graph machinery -----------------------------------------------------

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Backpropagate from this scalar into all requires_grad ancestors.

        Repeated calls accumulate; callers zero grads between steps.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar root, got shape {self.shape}"
            )
        order = _toposort(self)
        self.accumulate_grad(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __rsub__(self, other):
        return add(_lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return pow_scalar(self, exponent)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def sum(self, axis=None):
        return tsum(self, axis=axis)

    def mean(self, axis=None):
        return tmean(self, axis=axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _toposort(root: Tensor) -> list[Tensor]:
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
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def make_op(
    data: np.ndarray,
    parents: Iterable[Tensor],
    backward_factory,
) -> Tensor:
    """Create a graph node.

    ``backward_factory(out)`` must return the closure that reads
    ``out.grad`` and accumulates into the parents. It is only invoked when
    gradients are enabled and some parent requires them.
    """
    parents = tuple(parents)
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_factory(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise and structural ops -------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def factory(out):
        def backward():
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(out.grad, b.shape))

        return backward

    return make_op(a.data + b.data, (a, b), factory)


def neg(a: Tensor) -> Tensor:
    def factory(out):
        def backward():
            if a.requires_grad:
                a.accumulate_grad(-out.grad)

        return backward

    return make_op(-a.data, (a,), factory)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def factory(out):
        def backward():
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(out.grad * b.data, a.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(out.grad * a.data, b.shape))

        return backward

    return make_op(a.data * b.data, (a, b), factory)


def pow_scalar(a: Tensor, exponent) -> Tensor:
    if not isinstance(exponent, (int, float)):
        raise TypeError("only scalar exponents are supported")

    def factory(out):
        def backward():
            if a.requires_grad:
                a.accumulate_grad(out.grad * exponent * a.data ** (exponent - 1))

        return backward

    return make_op(a.data**exponent, (a,), factory)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects two rank-2 tensors")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul mismatch: {a.shape} @ {b.shape}")

    def factory(out):
        def backward():
            if a.requires_grad:
                a.accumulate_grad(out.grad @ b.data.T)
            if b.requires_grad:
                b.accumulate_grad(a.data.T @ out.grad)

        return backward

    return make_op(a.data @ b.data, (a, b), factory)


def tsum(a: Tensor, axis=None) -> Tensor:
    def factory(out):
        def backward():
            if not a.requires_grad:
                return
            g = out.grad
            if axis is None:
                a.accumulate_grad(np.broadcast_to(g, a.shape).copy())
            else:
                a.accumulate_grad(
                    np.broadcast_to(np.expand_dims(g, axis), a.shape).copy()
                )

        return backward

    return make_op(a.data.sum(axis=axis), (a,), factory)


def tmean(a: Tensor, axis=None) -> Tensor:
    if axis is None:
        count = a.size
    else:
        count = int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))

    def factory(out):
        def backward():
            if not a.requires_grad:
                return
            g = out.grad / count
            if axis is None:
                a.accumulate_grad(np.broadcast_to(g, a.shape).copy())
            else:
                a.accumulate_grad(
                    np.broadcast_to(np.expand_dims(g, axis), a.shape).copy()
                )

        return backward

    return make_op(a.data.mean(axis=axis), (a,), factory)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def factory(out):
        def backward():
            if a.requires_grad:
                a.accumulate_grad(out.grad.reshape(a.shape))

        return backward

    return make_op(a.data.reshape(shape), (a,), factory)


def relu(a: Tensor) -> Tensor:
    def factory(out):
        def backward():
            if a.requires_grad:
                a.accumulate_grad(out.grad * (a.data > 0))

        return backward

    return make_op(np.maximum(a.data, 0), (a,), factory)


def sigmoid(a: Tensor) -> Tensor:
    data = sigmoid_array(a.data)

    def factory(out):
        def backward():
            if a.requires_grad:
                a.accumulate_grad(out.grad * out.data * (1.0 - out.data))

        return backward

    return make_op(data, (a,), factory)


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function on a plain ndarray."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
