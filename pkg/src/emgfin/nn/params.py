"""Trainable parameter container shared by every layer."""

from __future__ import annotations

import numpy as np


class Param:
    """A float64 tensor plus its gradient and Adam moment buffers.

    `grad`, `adam_m` and `adam_v` always have the same shape as `value`;
    the moments start at zero and `step_count` at 0.
    """

    __slots__ = ("value", "grad", "adam_m", "adam_v", "step_count")

    def __init__(self, value: np.ndarray):
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)
        self.step_count = 0

    @classmethod
    def zeros(cls, *shape: int) -> "Param":
        return cls(np.zeros(shape, dtype=np.float64))

    @classmethod
    def uniform(cls, shape, fan_in: int, rng: np.random.Generator) -> "Param":
        """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization."""
        limit = 1.0 / np.sqrt(float(fan_in))
        return cls(rng.uniform(-limit, limit, size=shape))

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Param(shape={self.value.shape}, step={self.step_count})"


def count_params(params) -> int:
    """Total number of trainable scalars in a parameter collection."""
    return int(sum(p.size for p in params))
