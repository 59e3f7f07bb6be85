"""Score-map BCE against a Gaussian target plus L1 on offset and size at the target cell."""

from typing import Tuple

import numpy as np

from core.models import Box, Grid
from core.tensor import Tensor, binary_cross_entropy_with_logits
from core.utils.config import TrackerConfig
from core.utils.errors import SampleSkipped
from features.tracker.schemas import HeadOutput


def target_cell(gt: Box, grid: Grid, stride: float) -> Tuple[int, int]:
    col, row = int(np.floor(gt.cx / stride)), int(np.floor(gt.cy / stride))
    if not (0 <= row < grid.rows and 0 <= col < grid.cols):
        raise SampleSkipped(f"target center ({gt.cx:.1f}, {gt.cy:.1f}) is outside the search crop")
    return row, col


def gaussian_target(grid: Grid, row: int, col: int, sigma: float) -> np.ndarray:
    rows = np.arange(grid.rows)[:, None] - row
    cols = np.arange(grid.cols)[None, :] - col
    return np.exp(-(rows**2 + cols**2) / (2.0 * sigma**2)).reshape(-1)


def regression_targets(gt: Box, row: int, col: int, stride: float, crop_size: float) -> Tuple[np.ndarray, np.ndarray]:
    offset = np.array([gt.cx / stride - (col + 0.5), gt.cy / stride - (row + 0.5)])
    size = np.array([gt.w / crop_size, gt.h / crop_size])
    return offset, size


def compute_loss(head: HeadOutput, gt: Box, cfg: TrackerConfig) -> Tensor:
    row, col = target_cell(gt, head.grid, cfg.patch_size)
    index = row * head.grid.cols + col
    target = gaussian_target(head.grid, row, col, cfg.gaussian_sigma)
    offset_target, size_target = regression_targets(gt, row, col, cfg.patch_size, cfg.search_size)

    cls = binary_cross_entropy_with_logits(head.logits, target)
    offset = (head.offsets[index] - Tensor(offset_target)).abs().mean()
    size = (head.sizes[index] - Tensor(size_target)).abs().mean()
    return cls * cfg.cls_weight + offset * cfg.offset_weight + size * cfg.size_weight
