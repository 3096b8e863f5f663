"""Named parameter containers and the standard initializers."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from .autograd import Tensor, get_default_dtype


class ParameterStore:
    """Insertion-ordered map of trainable tensors.

    Names are unique; iteration order is the registration order, which keeps
    checkpoints and optimizer state aligned across runs.
    """

    def __init__(self) -> None:
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def count(self) -> int:
        """Total number of trainable scalars."""
        return sum(int(p.size) for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for name, p in self._params.items()}

    def state_dict(self) -> OrderedDict[str, np.ndarray]:
        return OrderedDict((name, p.data.copy()) for name, p in self._params.items())

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in self._params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != expected {p.shape}")
            p.data = value.astype(p.dtype, copy=True)


def uniform_fan_in(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())


def zeros(shape) -> np.ndarray:
    return np.zeros(shape, dtype=get_default_dtype())


def ones(shape) -> np.ndarray:
    return np.ones(shape, dtype=get_default_dtype())
