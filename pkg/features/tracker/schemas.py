from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from core.models import Box, DynamicTokenCache, Grid, Modality, TokenSeq
from core.tensor import MLPParams, Tensor
from core.utils.config import TrackerConfig
from features.encoder.schemas import EliminationRecord

SCORE_EPS = 1e-12


@dataclass
class HeadParams:
    """Pointwise 2-layer maps over the channel-concatenated RGB/TIR search grid."""

    score: MLPParams  # [2D] -> [hidden] -> [1]
    offset: MLPParams  # [2D] -> [hidden] -> [2]
    size: MLPParams  # [2D] -> [hidden] -> [2]

    @classmethod
    def create(cls, cfg: TrackerConfig, rng: np.random.Generator) -> "HeadParams":
        width = 2 * cfg.embed_dim
        return cls(
            score=MLPParams.create(width, cfg.head_hidden, rng, out_dim=1),
            offset=MLPParams.create(width, cfg.head_hidden, rng, out_dim=2),
            size=MLPParams.create(width, cfg.head_hidden, rng, out_dim=2),
        )


@dataclass
class HeadOutput:
    logits: Tensor  # [N]
    offsets: Tensor  # [N, 2] cell units, (dx, dy)
    sizes: Tensor  # [N, 2] fraction of the crop side, (w, h)
    grid: Grid

    def score_map(self) -> np.ndarray:
        """Per-cell confidence, clipped to ``[SCORE_EPS, 1 - SCORE_EPS]`` so saturated logits stay inside (0, 1)."""
        probs = np.exp(-np.logaddexp(0.0, -self.logits.data))
        probs = np.clip(probs, SCORE_EPS, 1.0 - SCORE_EPS)
        return probs.reshape(self.grid.rows, self.grid.cols)

    def offset_map(self) -> np.ndarray:
        return self.offsets.data.reshape(self.grid.rows, self.grid.cols, 2)

    def size_map(self) -> np.ndarray:
        return self.sizes.data.reshape(self.grid.rows, self.grid.cols, 2)


@dataclass(frozen=True)
class CropMapping:
    """Affine map between a square crop and the image: ``image = origin + crop / scale``."""

    origin_x: float
    origin_y: float
    scale: float
    size: int

    def point_to_image(self, u: float, v: float):
        return self.origin_x + u / self.scale, self.origin_y + v / self.scale

    def box_to_image(self, box: Box) -> Box:
        x, y = self.point_to_image(box.x, box.y)
        return Box(x=x, y=y, w=box.w / self.scale, h=box.h / self.scale)

    def box_to_crop(self, box: Box) -> Box:
        return Box(
            x=(box.x - self.origin_x) * self.scale,
            y=(box.y - self.origin_y) * self.scale,
            w=box.w * self.scale,
            h=box.h * self.scale,
        )


@dataclass
class TrackerState:
    """Per-sequence tracking memory. ``templates`` never change after ``track_init``."""

    templates: Dict[Modality, TokenSeq]
    template_digest: str
    cache: DynamicTokenCache
    previous_box: Box
    image_size: Tuple[int, int]  # (width, height)
    frame: int = 0
    last_score: float = 1.0
    updated_frames: List[int] = field(default_factory=list)
    records: Dict[Modality, Optional[EliminationRecord]] = field(default_factory=dict)
