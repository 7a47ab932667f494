"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A ``Tensor`` wraps an ndarray plus the bookkeeping needed to run
backpropagation: each non-leaf tensor remembers its parents together with a
vector-Jacobian-product closure per parent.  ``backward()`` walks the graph
in reverse topological order and accumulates gradients into ``.grad``.

Only the operations the classifier and its optimizers need are provided;
this is not a general framework.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError

_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf detection on every tensor construction (slow)."""
    global _debug_checks
    _debug_checks = bool(enabled)


def debug_checks_enabled() -> bool:
    return _debug_checks


# parent entry: (tensor, vjp) where vjp maps upstream grad -> grad w.r.t. parent
Parent = tuple["Tensor", Callable[[np.ndarray], np.ndarray]]


class Tensor:
    """n-dimensional float64 array participating in reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents")

    def __init__(self, data, requires_grad: bool = False, _parents: Sequence[Parent] = ()):
        arr = np.asarray(data, dtype=np.float64)
        if _debug_checks and arr.size and not np.all(np.isfinite(arr)):
            raise ValueError("tensor contains non-finite values")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(_parents)

    # ------------------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    # ------------------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every tensor that
        requires grad.  ``self`` must be scalar.  Repeated calls accumulate
        until grads are cleared.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar, got shape {self.shape}")

        order = _toposort(self)
        flows: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in order:
            g = flows.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            for parent, vjp in node._parents:
                if not parent.requires_grad:
                    continue
                contrib = vjp(g)
                pid = id(parent)
                prev = flows.get(pid)
                # never add in place: contrib may alias g or another buffer
                flows[pid] = contrib if prev is None else prev + contrib


def _toposort(root: Tensor) -> list[Tensor]:
    """Nodes ordered so that each node precedes all of its parents."""
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
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _make(data: np.ndarray, parents: Iterable[Parent]) -> Tensor:
    parents = tuple(parents)
    requires = any(p.requires_grad for p, _ in parents)
    return Tensor(data, requires_grad=requires, _parents=parents if requires else ())


# ----------------------------------------------------------------------
# arithmetic (broadcasting, used by losses/tests; conv etc. live in nnops)

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    ])


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(-g, b.shape)),
    ])


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, [
        (a, lambda g: _unbroadcast(g * b.data, a.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.shape)),
    ])


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, [(a, lambda g: -g)])


def pow_const(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    e = float(exponent)
    return _make(a.data ** e, [(a, lambda g: g * e * a.data ** (e - 1.0))])


def tsum(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.asarray(a.data.sum()), [
        (a, lambda g: np.broadcast_to(g, a.shape)),
    ])


def tmean(a) -> Tensor:
    a = as_tensor(a)
    n = a.size
    return _make(np.asarray(a.data.mean()), [
        (a, lambda g: np.broadcast_to(g / n, a.shape)),
    ])


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), [(a, lambda g: g.reshape(old))])


# operator sugar
Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__pow__ = lambda self, e: pow_const(self, e)
Tensor.__truediv__ = lambda self, c: mul(self, 1.0 / float(c))
Tensor.sum = lambda self: tsum(self)
Tensor.mean = lambda self: tmean(self)
Tensor.reshape = lambda self, shape: reshape(self, shape)
