"""Square context crops with bilinear resize and zero padding."""

import logging
import math
from typing import Optional, Tuple

import numpy as np

from core.models import Box, ModalImage
from core.utils.errors import ConfigError, ContractError
from features.tracker.schemas import CropMapping

logger = logging.getLogger(__name__)


def crop_mapping(box: Box, factor: float, out_size: int) -> CropMapping:
    """Square of side ``factor * sqrt(w * h)`` centered on the box, scaled to ``out_size``."""
    if factor < 1.0:
        raise ConfigError(f"crop factor {factor} must be at least 1")
    if box.is_degenerate:
        raise ContractError("cannot crop around a degenerate box")
    side = factor * math.sqrt(box.w * box.h)
    return CropMapping(
        origin_x=box.cx - side / 2.0,
        origin_y=box.cy - side / 2.0,
        scale=out_size / side,
        size=out_size,
    )


def _sample_axis(coords: np.ndarray, extent: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    lo = np.floor(coords)
    weight = coords - lo
    lo = lo.astype(np.int64)
    # +1 shifts into the zero-padded frame; anything outside lands on the padding
    i0 = np.clip(lo, -1, extent) + 1
    i1 = np.clip(lo + 1, -1, extent) + 1
    return i0, i1, weight


def resize_crop(pixels: np.ndarray, mapping: CropMapping) -> np.ndarray:
    """Bilinear samples at crop pixel centers; outside the image reads as zero."""
    height, width, _ = pixels.shape
    centers = (np.arange(mapping.size) + 0.5) / mapping.scale - 0.5
    y0, y1, wy = _sample_axis(mapping.origin_y + centers, height)
    x0, x1, wx = _sample_axis(mapping.origin_x + centers, width)
    padded = np.pad(pixels, ((1, 1), (1, 1), (0, 0)))
    rows = padded[y0] * (1.0 - wy)[:, None, None] + padded[y1] * wy[:, None, None]
    return rows[:, x0] * (1.0 - wx)[None, :, None] + rows[:, x1] * wx[None, :, None]


def crop_window(
    rgb: ModalImage,
    tir: ModalImage,
    center_box: Box,
    factor: float,
    out_size: int,
    fallback: Optional[Box] = None,
) -> Tuple[ModalImage, ModalImage, CropMapping]:
    """Crop both modalities with the same mapping; a degenerate box falls back to ``fallback``."""
    box = center_box
    if box.is_degenerate:
        if fallback is None or fallback.is_degenerate:
            raise ContractError("degenerate crop box and no valid previous box")
        logger.warning("degenerate crop box %s, using previous box", box.to_line())
        box = fallback
    mapping = crop_mapping(box, factor, out_size)
    return (
        ModalImage(resize_crop(rgb.pixels, mapping), rgb.modality),
        ModalImage(resize_crop(tir.pixels, mapping), tir.modality),
        mapping,
    )
