"""Parameter containers and initialization for the transformer building blocks."""

import dataclasses
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

import numpy as np

from core.tensor.tensor import Tensor
from core.utils.errors import DimensionError

INIT_STD = 0.02


def _param(array: np.ndarray) -> Tensor:
    return Tensor(array, requires_grad=True)


@dataclass
class LinearParams:
    weight: Tensor  # [in, out]
    bias: Optional[Tensor] = None  # [out]

    def __post_init__(self):
        if self.weight.ndim != 2:
            raise DimensionError(f"linear weight must be 2-D, got {self.weight.shape}")
        if self.bias is not None and self.bias.shape != (self.weight.shape[1],):
            raise DimensionError(
                f"bias length {self.bias.shape} does not match out={self.weight.shape[1]}"
            )

    @property
    def in_features(self) -> int:
        return self.weight.shape[0]

    @property
    def out_features(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def create(
        cls, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True
    ) -> "LinearParams":
        weight = _param(rng.normal(0.0, INIT_STD, size=(in_features, out_features)))
        return cls(weight, _param(np.zeros(out_features)) if bias else None)


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor

    @classmethod
    def create(cls, dim: int) -> "LayerNormParams":
        return cls(_param(np.ones(dim)), _param(np.zeros(dim)))


@dataclass
class MLPParams:
    fc1: LinearParams
    fc2: LinearParams

    @classmethod
    def create(
        cls, dim: int, hidden: int, rng: np.random.Generator, out_dim: Optional[int] = None
    ) -> "MLPParams":
        return cls(
            LinearParams.create(dim, hidden, rng),
            LinearParams.create(hidden, out_dim or dim, rng),
        )


@dataclass
class AttentionParams:
    """Query/key/value projections plus the output projection; heads share them column-wise."""

    q: LinearParams
    k: LinearParams
    v: LinearParams
    out: LinearParams

    @classmethod
    def create(cls, dim: int, rng: np.random.Generator) -> "AttentionParams":
        return cls(*(LinearParams.create(dim, dim, rng) for _ in range(4)))


def iter_parameters(obj, prefix: str = "", seen: Optional[set] = None) -> Iterator[Tuple[str, Tensor]]:
    """Yield ``(dotted.name, tensor)`` for every parameter under ``obj`` in a stable order.

    A tensor reachable under several names (tied weights) is yielded once, under its first name.
    """
    seen = set() if seen is None else seen
    if isinstance(obj, Tensor):
        if id(obj) not in seen:
            seen.add(id(obj))
            yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for field in dataclasses.fields(obj):
            value = getattr(obj, field.name)
            if value is not None:
                yield from iter_parameters(value, _join(prefix, field.name), seen)
    elif isinstance(obj, dict):
        for key in sorted(obj):
            yield from iter_parameters(obj[key], _join(prefix, str(key)), seen)
    elif isinstance(obj, (list, tuple)):
        for index, value in enumerate(obj):
            yield from iter_parameters(value, _join(prefix, str(index)), seen)


def parameter_list(obj) -> List[Tensor]:
    return [tensor for _, tensor in iter_parameters(obj)]


def zero_grads(obj) -> None:
    for _, tensor in iter_parameters(obj):
        tensor.zero_grad()


def _join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name
