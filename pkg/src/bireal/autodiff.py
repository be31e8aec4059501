"""Minimal reverse-mode tape over numpy arrays.

Each ``Tensor`` records its parents and a closure that routes its output
gradient to them. ``backward`` walks the graph once in reverse topological
order; gradients accumulate additively at fan-out. All ops are sequential
and deterministic, so repeated backward passes over the same graph are
bit-identical.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad=False, parents=(), grad_fn=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = tuple(parents) if self.requires_grad else ()
        self._grad_fn = grad_fn if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, seed=None) -> None:
        if seed is None:
            seed = np.ones_like(self.data)
        order = _topo_order(self)
        self.accumulate(np.asarray(seed, dtype=self.data.dtype))
        for node in reversed(order):
            if node._grad_fn is not None and node.grad is not None:
                node._grad_fn(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order DFS; parents precede children in the result."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return order


def parameter(data, rng=None, shape=None, std=None, dtype=np.float32) -> Tensor:
    """Learnable leaf tensor. With rng/shape/std, draws a normal init."""
    if data is None:
        data = rng.normal(0.0, std, size=shape).astype(dtype)
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)
