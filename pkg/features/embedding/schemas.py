from dataclasses import dataclass

import numpy as np

from core.tensor import LinearParams, Tensor
from core.utils.config import TrackerConfig
from core.tensor.params import INIT_STD


@dataclass
class EmbedParams:
    """One patch projection and one pair of position embeddings, shared by RGB and TIR."""

    patch_proj: LinearParams  # [3*P*P, D]
    pos_template: Tensor  # [N_z, D]
    pos_search: Tensor  # [N_x, D]

    @classmethod
    def create(cls, cfg: TrackerConfig, rng: np.random.Generator) -> "EmbedParams":
        patch_dim = 3 * cfg.patch_size**2
        return cls(
            patch_proj=LinearParams.create(patch_dim, cfg.embed_dim, rng),
            pos_template=Tensor(
                rng.normal(0.0, INIT_STD, size=(cfg.n_template, cfg.embed_dim)), requires_grad=True
            ),
            pos_search=Tensor(
                rng.normal(0.0, INIT_STD, size=(cfg.n_search, cfg.embed_dim)), requires_grad=True
            ),
        )
