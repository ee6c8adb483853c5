"""Minimal reverse-mode autodiff over NumPy arrays.

Each operation records its parents and a closure that maps the output
gradient to parent gradients; :func:`backward` walks the recorded graph in
reverse topological order and accumulates into ``Tensor.grad``. Graphs with
fan-out (skip connections) are handled by gradient accumulation.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Array node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def make_node(data, parents, backward_fn) -> Tensor:
    """Create an op output; records the graph only while grads are enabled."""
    out = Tensor(data)
    if _grad_enabled:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order = []
    seen = set()
    stack = [(root, False)]
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
    return order


def backward(root: Tensor) -> None:
    """Accumulate gradients of ``root`` (a scalar) into every reachable node."""
    if root.data.size != 1:
        raise ValueError(f"backward() needs a scalar root, got shape {root.shape}")
    order = _topo_order(root)
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g
        # Release intermediate gradients and the closure to cap memory.
        if not node.requires_grad and node is not root:
            node.grad = None
        node._backward = None
        node._parents = ()
