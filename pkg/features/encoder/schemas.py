from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from core.models import Modality, TokenSeq
from core.tensor import AttentionParams, LayerNormParams, MLPParams
from core.utils.config import TrackerConfig


@dataclass
class EncoderLayerParams:
    """One pre-norm transformer block; the same instance serves both modality streams."""

    norm1: LayerNormParams
    attn: AttentionParams
    norm2: LayerNormParams
    mlp: MLPParams

    @classmethod
    def create(cls, cfg: TrackerConfig, rng: np.random.Generator) -> "EncoderLayerParams":
        dim = cfg.embed_dim
        return cls(
            norm1=LayerNormParams.create(dim),
            attn=AttentionParams.create(dim, rng),
            norm2=LayerNormParams.create(dim),
            mlp=MLPParams.create(dim, round(cfg.mlp_ratio * dim), rng),
        )


class EliminationRecord(BaseModel):
    """Search tokens that survived elimination, as indices into the original search ordering."""

    model_config = ConfigDict(frozen=True)

    layer_index: int
    kept_indices: Tuple[int, ...]
    original_len: int

    @model_validator(mode="after")
    def strictly_increasing(self) -> "EliminationRecord":
        kept = self.kept_indices
        if any(b <= a for a, b in zip(kept, kept[1:])):
            raise ValueError("kept_indices must be strictly increasing")
        if kept and (kept[0] < 0 or kept[-1] >= self.original_len):
            raise ValueError(f"kept_indices must lie in [0, {self.original_len})")
        return self

    @classmethod
    def full(cls, length: int, layer_index: int = 0) -> "EliminationRecord":
        return cls(layer_index=layer_index, kept_indices=tuple(range(length)), original_len=length)


@dataclass
class StagedLayer:
    """Tokens captured at one preserve layer for both modalities."""

    search: Dict[Modality, TokenSeq]
    template: Dict[Modality, TokenSeq]
    records: Dict[Modality, Optional[EliminationRecord]]


@dataclass
class BackboneOutput:
    rgb: TokenSeq  # final joint sequence
    tir: TokenSeq
    staged: Dict[int, StagedLayer] = field(default_factory=dict)
    records: Dict[Modality, Optional[EliminationRecord]] = field(default_factory=dict)
