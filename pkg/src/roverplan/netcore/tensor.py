"""Minimal reverse-mode autodiff over numpy arrays.

Each op returns a Tensor holding its parents and a closure that maps the
output gradient to parent gradient contributions. backward() walks the
recorded graph once in reverse topological order. Training runs in float32;
the precision() context switches new tensors to float64 for gradient
checking.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_STATE = {"dtype": np.float32, "grad": True}


def default_dtype():
    return _STATE["dtype"]


def grad_enabled() -> bool:
    return _STATE["grad"]


@contextmanager
def precision(dtype):
    """Temporarily change the dtype used for newly created tensors."""
    prev = _STATE["dtype"]
    _STATE["dtype"] = np.dtype(dtype).type
    try:
        yield
    finally:
        _STATE["dtype"] = prev


@contextmanager
def no_grad():
    """Disable graph recording, e.g. for evaluation forward passes."""
    prev = _STATE["grad"]
    _STATE["grad"] = False
    try:
        yield
    finally:
        _STATE["grad"] = prev


class Tensor:
    """Numpy array plus gradient slot and autograd bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=default_dtype())
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def make_result(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    """Assemble an op result, recording the graph only when it matters."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._parents = ()
    out._backward = None
    out.requires_grad = False
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(root: Tensor, grad: np.ndarray | None = None):
    """Propagate gradients from root to every reachable requires_grad leaf."""
    if root._backward is None:
        raise RuntimeError(
            "backward() needs a tensor produced by a recorded forward pass"
        )
    if grad is None:
        if root.data.size != 1:
            raise RuntimeError("implicit gradient only defined for scalars")
        grad = np.ones_like(root.data)
    # iterative topological sort; VIN unrolls deep chains
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.asarray(grad, dtype=root.data.dtype)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            if node is not root:
                # interior activations are not reused after their turn
                node.grad = None
