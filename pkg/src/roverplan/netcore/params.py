"""Named parameter storage, initialization, and the SGD update."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, default_dtype


class ParamStore:
    """Ordered name -> Tensor mapping with unique names.

    Iteration order is insertion order, which fixes the checkpoint record
    order and keeps every reduction deterministic.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def grad_norm(self) -> float:
        total = 0.0
        for t in self._params.values():
            if t.grad is not None:
                total += float(np.sum(np.asarray(t.grad, dtype=np.float64) ** 2))
        return float(np.sqrt(total))

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        mine = set(self._params)
        theirs = set(arrays)
        if mine != theirs:
            raise ValueError(
                f"parameter names differ: missing {sorted(mine - theirs)}, "
                f"unexpected {sorted(theirs - mine)}"
            )
        for k, t in self._params.items():
            a = arrays[k]
            if tuple(a.shape) != tuple(t.data.shape):
                raise ValueError(
                    f"shape mismatch for {k!r}: stored {a.shape}, model {t.data.shape}"
                )
            t.data = np.asarray(a, dtype=default_dtype()).copy()


def he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    """Fan-in-scaled uniform init, bound sqrt(6 / fan_in)."""
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(default_dtype())


def sgd_step(store: ParamStore, lr: float):
    """Plain gradient descent: p <- p - lr * grad, in place."""
    for t in store.tensors():
        if t.grad is not None:
            t.data -= np.asarray(t.grad, dtype=t.data.dtype) * t.data.dtype.type(lr)
