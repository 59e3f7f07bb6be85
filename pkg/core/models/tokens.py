"""Images and token sequences shared by the embedding, encoder, STMT and memory stages."""

import enum
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from core.tensor import Tensor
from core.utils.errors import ContractError, DimensionError


class Modality(str, enum.Enum):
    RGB = "rgb"
    TIR = "tir"


class Role(str, enum.Enum):
    TEMPLATE = "template"
    SEARCH = "search"
    DYNAMIC = "dynamic"
    JOINT = "joint"


@dataclass(frozen=True)
class Grid:
    rows: int
    cols: int

    @property
    def size(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class ModalImage:
    """Pixels ``[H, W, 3]`` (RGB) or ``[H, W, 1]`` (TIR)."""

    pixels: np.ndarray
    modality: Modality

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] not in (1, 3):
            raise DimensionError(f"image must be [H, W, 1|3], got {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class TokenSeq:
    """``[N, D]`` tokens tagged with role and modality.

    ``grid`` is set for spatial sequences (``N == rows * cols``). Search
    sequences shortened by candidate elimination carry no grid. Joint
    sequences record the (template, search) grids in ``layout`` and the
    template length in ``n_z``.
    """

    tokens: Tensor
    role: Role
    modality: Modality
    grid: Optional[Grid] = None
    layout: Optional[Tuple[Grid, Grid]] = None
    n_z: int = 0

    def __post_init__(self):
        if self.tokens.ndim != 2:
            raise DimensionError(f"tokens must be [N, D], got {self.tokens.shape}")
        if self.grid is not None and self.grid.size != len(self):
            raise ContractError(
                f"grid {self.grid.rows}x{self.grid.cols} does not hold {len(self)} tokens"
            )

    def __len__(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]

    def with_tokens(self, tokens: Tensor) -> "TokenSeq":
        return TokenSeq(tokens, self.role, self.modality, self.grid, self.layout, self.n_z)

    def detached(self) -> "TokenSeq":
        return self.with_tokens(self.tokens.detach())
