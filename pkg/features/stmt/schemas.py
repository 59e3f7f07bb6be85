from dataclasses import dataclass
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from core.tensor import AttentionParams, LayerNormParams, MLPParams
from core.utils.config import TrackerConfig


@dataclass
class CrossAttentionParams:
    attn: AttentionParams
    norm: LayerNormParams
    mlp: MLPParams

    @classmethod
    def create(cls, cfg: TrackerConfig, rng: np.random.Generator) -> "CrossAttentionParams":
        dim = cfg.embed_dim
        return cls(
            attn=AttentionParams.create(dim, rng),
            norm=LayerNormParams.create(dim),
            mlp=MLPParams.create(dim, round(cfg.mlp_ratio * dim), rng),
        )


@dataclass
class StmtLayerParams:
    """Per insertion layer. ``ca_template`` serves both CA(Z_v, Z_t) and CA(Z_t, Z_v)."""

    ca_template: CrossAttentionParams
    ca_dynamic: CrossAttentionParams
    tf: CrossAttentionParams

    @classmethod
    def create(cls, cfg: TrackerConfig, rng: np.random.Generator) -> "StmtLayerParams":
        ca_template = CrossAttentionParams.create(cfg, rng)
        ca_dynamic = ca_template if cfg.share_dynamic_ca else CrossAttentionParams.create(cfg, rng)
        return cls(ca_template, ca_dynamic, CrossAttentionParams.create(cfg, rng))


class StmtConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    insert_layers: Tuple[int, ...] = (4, 7, 10)
    tf_layers: Tuple[int, ...] = (10,)
    enable_modality_enhancement: bool = True
    enable_dynamic_tokens: bool = True

    @model_validator(mode="after")
    def tf_subset(self) -> "StmtConfig":
        if not set(self.tf_layers) <= set(self.insert_layers):
            raise ValueError("tf_layers must be a subset of insert_layers")
        return self

    @classmethod
    def from_tracker(cls, cfg: TrackerConfig) -> "StmtConfig":
        return cls(
            insert_layers=cfg.insert_layers,
            tf_layers=cfg.tf_layers,
            enable_modality_enhancement=cfg.enable_modality_enhancement,
            enable_dynamic_tokens=cfg.enable_dynamic_tokens,
        )

    def fuses_at(self, layer: int) -> bool:
        return self.enable_dynamic_tokens and layer in self.tf_layers
