"""Frame-by-frame RGBT tracking with a static template and a gated dynamic-token cache."""

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Mapping, Optional, Sequence, Tuple, Union

from core.models import Box, DynamicTokenCache, ModalImage, Modality, Role, TokenSeq
from core.tensor import no_grad
from core.utils.config import TrackerConfig
from core.utils.errors import ContractError
from features.data_io.sequence import SequenceDir
from features.memory.service import dump_cache, extract_dynamic_tokens, init_cache, maybe_update, update_policy
from features.tracker.crop import crop_window
from features.tracker.head import decode_box
from features.tracker.network import ForwardResult, NetworkParams, embed_image, forward_tokens
from features.tracker.schemas import TrackerState

logger = logging.getLogger(__name__)


def _template_digest(templates: Mapping[Modality, TokenSeq]) -> str:
    sha = hashlib.sha256()
    for modality in (Modality.RGB, Modality.TIR):
        sha.update(templates[modality].tokens.data.tobytes())
    return sha.hexdigest()


def _search_pass(
    state_templates: Mapping[Modality, TokenSeq],
    rgb: ModalImage,
    tir: ModalImage,
    center: Box,
    params: NetworkParams,
    cfg: TrackerConfig,
    entries=None,
    fallback: Optional[Box] = None,
):
    x_rgb, x_tir, mapping = crop_window(rgb, tir, center, cfg.search_factor, cfg.search_size, fallback)
    x = {
        Modality.RGB: embed_image(x_rgb, Role.SEARCH, params, cfg),
        Modality.TIR: embed_image(x_tir, Role.SEARCH, params, cfg),
    }
    return forward_tokens(state_templates, x, params, cfg, entries), mapping


def _decode(result: ForwardResult, cfg: TrackerConfig) -> Tuple[Box, float]:
    head = result.head
    return decode_box(head.score_map(), head.offset_map(), head.size_map(), cfg.patch_size, cfg.search_size)


def track_init(rgb: ModalImage, tir: ModalImage, gt: Box, params: NetworkParams, cfg: TrackerConfig) -> TrackerState:
    """Build both templates around ``gt`` and seed the cache from one search pass centered on it."""
    if rgb.pixels.shape[:2] != tir.pixels.shape[:2]:
        raise ContractError("rgb and tir frames differ in size")
    width, height = rgb.width, rgb.height
    if gt.is_degenerate or gt.x >= width or gt.y >= height or gt.x + gt.w <= 0 or gt.y + gt.h <= 0:
        raise ContractError(f"initial box {gt.to_line()} is outside the {width}x{height} image")

    with no_grad():
        z_rgb, z_tir, _ = crop_window(rgb, tir, gt, cfg.template_factor, cfg.template_size)
        templates = {
            Modality.RGB: embed_image(z_rgb, Role.TEMPLATE, params, cfg).detached(),
            Modality.TIR: embed_image(z_tir, Role.TEMPLATE, params, cfg).detached(),
        }
        result, mapping = _search_pass(templates, rgb, tir, gt, params, cfg)
        if result.backbone.staged:
            cache = init_cache(result.backbone.staged, mapping.box_to_crop(gt), cfg)
        else:
            cache = DynamicTokenCache()

    logger.debug("tracker initialized on %s with %d cached layers", gt.to_line(), len(cache.entries))
    return TrackerState(
        templates=templates,
        template_digest=_template_digest(templates),
        cache=cache,
        previous_box=gt,
        image_size=(width, height),
        records=dict(result.backbone.records),
    )


def track_step(
    state: TrackerState, rgb: ModalImage, tir: ModalImage, params: NetworkParams, cfg: TrackerConfig
) -> Tuple[Box, float]:
    """Search around the previous box, predict, then stage this frame's dynamic tokens for the next one."""
    if _template_digest(state.templates) != state.template_digest:
        raise ContractError(f"template tokens changed before frame {state.frame + 1}")
    fuse = cfg.enable_dynamic_tokens and bool(cfg.tf_layers)
    with no_grad():
        result, mapping = _search_pass(
            state.templates, rgb, tir, state.previous_box, params, cfg,
            entries=state.cache.entries if fuse else None, fallback=state.previous_box,
        )
        crop_box, score = _decode(result, cfg)
        crop_box = crop_box.clamp(cfg.search_size, cfg.search_size)
        width, height = state.image_size
        box = mapping.box_to_image(crop_box).clamp(width, height)

        state.frame += 1
        if result.backbone.staged:
            staged = extract_dynamic_tokens(result.backbone.staged, crop_box, cfg)
            state.cache, updated = maybe_update(state.cache, staged, state.frame, score, update_policy(cfg))
            if updated:
                state.updated_frames.append(state.frame)
    logger.debug("frame %d score %.3f box %s", state.frame, score, box.to_line())
    state.previous_box = box
    state.last_score = score
    state.records = dict(result.backbone.records)
    return box, score


def run_sequence(
    frames,
    gt: Box,
    params: NetworkParams,
    cfg: TrackerConfig,
    dump_dir: Optional[Union[str, Path]] = None,
) -> List[Box]:
    """Track over ``frames`` (an iterable of ``(rgb, tir)`` pairs); frame 1 reports ``gt``."""
    iterator = iter(frames)
    try:
        rgb, tir = next(iterator)
    except StopIteration:
        raise ContractError("sequence has no frames") from None
    state = track_init(rgb, tir, gt, params, cfg)
    boxes = [gt]
    for rgb, tir in iterator:
        box, _ = track_step(state, rgb, tir, params, cfg)
        boxes.append(box)
    if dump_dir is not None:
        dump_cache(state.cache, Path(dump_dir) / "cache.bin")
    logger.info("tracked %d frames, cache updated at %d frames", len(boxes), len(state.updated_frames))
    return boxes


def track_sequence(
    seq: SequenceDir, params: NetworkParams, cfg: TrackerConfig, dump_dir: Optional[Union[str, Path]] = None
) -> List[Box]:
    return run_sequence(seq.frames(), seq.groundtruth[0], params, cfg, dump_dir)


def track_many(
    sequences: Sequence[SequenceDir], params: NetworkParams, cfg: TrackerConfig, jobs: int = 1
) -> List[List[Box]]:
    """Sequences run independently and share read-only parameters."""
    if jobs <= 1 or len(sequences) <= 1:
        return [track_sequence(seq, params, cfg) for seq in sequences]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda seq: track_sequence(seq, params, cfg), sequences))
