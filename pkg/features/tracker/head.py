"""Box + confidence head over the fused search grid."""

from typing import Tuple

import numpy as np

from core.models import Box, TokenSeq
from core.tensor import MLPParams, Tensor, concat, gelu, linear
from core.utils.config import TrackerConfig
from core.utils.errors import ContractError
from features.tracker.schemas import HeadOutput, HeadParams


def _pointwise(x: Tensor, params: MLPParams) -> Tensor:
    return linear(gelu(linear(x, params.fc1)), params.fc2)


def run_head(x_v: TokenSeq, x_t: TokenSeq, params: HeadParams) -> HeadOutput:
    for seq in (x_v, x_t):
        if seq.grid is None or seq.grid.size != len(seq):
            raise ContractError(f"{seq.modality.value} search tokens must be restored to the full grid")
    if x_v.grid != x_t.grid:
        raise ContractError("rgb and tir search grids differ")
    fused = concat([x_v.tokens, x_t.tokens], axis=1)
    n = len(x_v)
    return HeadOutput(
        logits=_pointwise(fused, params.score).reshape(n),
        offsets=_pointwise(fused, params.offset),
        sizes=_pointwise(fused, params.size).sigmoid(),
        grid=x_v.grid,
    )


def decode_box(
    score_map: np.ndarray, offsets: np.ndarray, sizes: np.ndarray, stride: float, crop_size: float
) -> Tuple[Box, float]:
    """Box around the best cell in crop pixels.

    Ties go to the lowest row-major index. ``cx = (col + 0.5 + dx) * stride``,
    ``w = size_w * crop_size``; the score is the maximum of the map.
    """
    flat = int(np.argmax(score_map))
    row, col = divmod(flat, score_map.shape[1])
    dx, dy = offsets[row, col]
    w, h = sizes[row, col]
    box = Box.from_center(
        (col + 0.5 + dx) * stride,
        (row + 0.5 + dy) * stride,
        max(float(w), 0.0) * crop_size,
        max(float(h), 0.0) * crop_size,
    )
    return box, float(score_map[row, col])


def predict_head(x_v: TokenSeq, x_t: TokenSeq, params: HeadParams, cfg: TrackerConfig) -> Tuple[Box, float]:
    out = run_head(x_v, x_t, params)
    return decode_box(out.score_map(), out.offset_map(), out.size_map(), cfg.patch_size, cfg.search_size)
