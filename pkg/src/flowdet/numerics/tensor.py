"""Dense float tensors with recorded, hand-derived backward passes.

Every differentiable operation in :mod:`flowdet.numerics.ops` computes its
forward result with numpy and registers an explicit vector-Jacobian product
written for that op alone; ``Tensor.backward`` only replays them in reverse
topological order. Two precisions are supported: float64 for oracle and
gradient-check work, float32 for training.
"""

from __future__ import annotations

import numpy as np

FLOAT32 = np.float32
FLOAT64 = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes or channel counts do not line up."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A numpy array plus an optional gradient buffer and backward hook."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    def backward(self, grad=None) -> None:
        """Accumulate gradients of a scalar (or explicitly seeded) output."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ShapeError(f"seed gradient shape {grad.shape} != output shape {self.data.shape}")

        order = _toposort(self)
        self.grad = grad if self.grad is None else self.grad + grad
        for node in order:
            if node._backward is None or node.grad is None:
                continue
            for parent, pgrad in zip(node._parents, node._backward(node.grad)):
                if pgrad is None or not parent.requires_grad:
                    continue
                parent.grad = pgrad if parent.grad is None else parent.grad + pgrad


def _toposort(root: Tensor):
    """Reverse post-order over the recorded graph, iteratively."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


def record(data: np.ndarray, parents, backward) -> Tensor:
    """Wrap an op result; record parents/backward only when grads are live."""
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(value, like: Tensor | None = None, dtype=None) -> Tensor:
    """Coerce arrays/scalars to a constant Tensor, matching ``like``'s dtype."""
    if isinstance(value, Tensor):
        return value
    if dtype is None and like is not None:
        dtype = like.data.dtype
    return Tensor(np.asarray(value, dtype=dtype))


def parameter(data, dtype=FLOAT32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)
