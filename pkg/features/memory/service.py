"""Multimodal dynamic-token extraction and the gated cache update.

Search tokens saved at the preserve layers are restored to full length
(eliminated positions become zeros), reshaped to the patch grid, cropped
around the predicted box with ROI-align to the template grid size and
flattened back into template-sized token sequences.
"""

import logging
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np

from core.models import Box, CacheEntry, DynamicTokenCache, Grid, Modality, Role, TokenSeq, UpdatePolicy
from core.tensor import Tensor, scatter_rows
from core.utils.checkpoint import save_tensors
from core.utils.config import TrackerConfig
from core.utils.errors import ContractError
from features.encoder.schemas import EliminationRecord, StagedLayer

logger = logging.getLogger(__name__)


def restore_tokens(x: TokenSeq, rec: EliminationRecord, grid: Optional[Grid] = None) -> TokenSeq:
    if len(x) != len(rec.kept_indices):
        raise ContractError(f"{len(x)} tokens cannot restore a record keeping {len(rec.kept_indices)}")
    tokens = scatter_rows(x.tokens, rec.kept_indices, rec.original_len)
    if grid is not None and grid.size != rec.original_len:
        raise ContractError(f"grid {grid.rows}x{grid.cols} does not hold {rec.original_len} tokens")
    return TokenSeq(tokens, x.role, x.modality, grid=grid)


def tokens_to_grid(x: TokenSeq) -> Tensor:
    """``[N, D]`` -> ``[rows, cols, D]``; token ``i`` lands at ``(i // cols, i % cols)``."""
    if x.grid is None or x.grid.size != len(x):
        raise ContractError("token sequence has no grid matching its length")
    return x.tokens.reshape(x.grid.rows, x.grid.cols, x.dim)


def grid_to_tokens(fm: Tensor, role: Role, modality: Modality) -> TokenSeq:
    rows, cols, dim = fm.shape
    return TokenSeq(fm.reshape(rows * cols, dim), role, modality, grid=Grid(rows, cols))


def roi_align(
    fm: Union[np.ndarray, Tensor], roi: Box, out: Tuple[int, int], sampling: int = 2
) -> np.ndarray:
    """Average of ``sampling**2`` bilinear samples per output bin.

    ``roi`` is in grid units with cell ``k`` spanning ``[k, k+1)`` and
    centered at ``k + 0.5``. Samples outside the map are clamped to the border.
    """
    data = fm.data if isinstance(fm, Tensor) else np.asarray(fm, dtype=np.float64)
    if roi.w <= 0 or roi.h <= 0:
        raise ContractError(f"roi must have positive extent, got {roi.w}x{roi.h}")
    if sampling < 1:
        raise ContractError("sampling must be at least 1")
    rows, cols, dim = data.shape
    out_rows, out_cols = out
    offsets = (np.arange(sampling) + 0.5) / sampling

    def sample_axis(start: float, length: float, bins: int, extent: int):
        coords = start + (np.arange(bins)[:, None] + offsets[None, :]) * (length / bins)
        index = np.clip(coords.reshape(-1) - 0.5, 0.0, extent - 1)
        lo = np.floor(index).astype(np.int64)
        hi = np.minimum(lo + 1, extent - 1)
        return lo, hi, index - lo

    y0, y1, wy = sample_axis(roi.y, roi.h, out_rows, rows)
    x0, x1, wx = sample_axis(roi.x, roi.w, out_cols, cols)
    along_y = data[y0] + wy[:, None, None] * (data[y1] - data[y0])
    samples = along_y[:, x0] + wx[None, :, None] * (along_y[:, x1] - along_y[:, x0])
    samples = samples.reshape(out_rows, sampling, out_cols, sampling, dim)
    # shifted mean: exact on constant maps
    reference = samples[:, :1, :, :1]
    return reference[:, 0, :, 0] + (samples - reference).mean(axis=(1, 3))


def extract_dynamic_tokens(
    staged: Mapping[int, StagedLayer], bbox: Box, cfg: TrackerConfig
) -> Dict[int, CacheEntry]:
    """Per preserve layer and modality: restore -> grid -> ROI-align(bbox / P) -> tokens."""
    roi = bbox.scaled(1.0 / cfg.patch_size)
    search_grid = Grid(cfg.search_grid, cfg.search_grid)
    out = (cfg.template_grid, cfg.template_grid)
    entries: Dict[int, CacheEntry] = {}
    for layer in sorted(staged):
        stage = staged[layer]
        pair = []
        for modality in (Modality.RGB, Modality.TIR):
            if modality not in stage.search:
                raise ContractError(f"layer {layer} has no {modality.value} search tokens")
            seq = stage.search[modality]
            record = stage.records.get(modality)
            if record is not None:
                seq = restore_tokens(seq, record, search_grid)
            cropped = roi_align(tokens_to_grid(seq), roi, out, cfg.roi_sampling)
            pair.append(grid_to_tokens(Tensor(cropped), Role.DYNAMIC, modality))
        entries[layer] = (pair[0], pair[1])
    return entries


def maybe_update(
    cache: DynamicTokenCache,
    staged: Mapping[int, CacheEntry],
    frame_idx: int,
    score: float,
    policy: UpdatePolicy,
) -> Tuple[DynamicTokenCache, bool]:
    """Replace the cache iff the interval has elapsed and ``score`` exceeds the threshold."""
    if frame_idx - cache.last_update_frame < policy.interval or score <= policy.score_threshold:
        return cache, False
    missing = set(cache.entries) - set(staged)
    if missing:
        raise ContractError(f"staged tokens miss preserve layers {sorted(missing)}")
    logger.debug("cache updated at frame %d (score %.3f)", frame_idx, score)
    return DynamicTokenCache(dict(staged), frame_idx, float(score)), True


def init_cache(staged: Mapping[int, StagedLayer], gt_box: Box, cfg: TrackerConfig) -> DynamicTokenCache:
    """Cold start: seed every preserve layer from the first frame's search crop and its ground truth."""
    entries = extract_dynamic_tokens(staged, gt_box, cfg)
    return DynamicTokenCache(entries, last_update_frame=0, source_score=1.0)


def update_policy(cfg: TrackerConfig) -> UpdatePolicy:
    return UpdatePolicy(interval=cfg.update_interval, score_threshold=cfg.score_threshold)


def dump_cache(cache: DynamicTokenCache, path: Union[str, Path]) -> Path:
    tensors = {}
    for layer in sorted(cache.entries):
        for seq in cache.entries[layer]:
            tensors[f"layer{layer}.{seq.modality.value}"] = seq.tokens.data
    return save_tensors(path, tensors)
