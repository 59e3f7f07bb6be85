"""Draw S and T pairs from disjoint frames of one sequence."""

import logging
from typing import Sequence

import numpy as np

from core.models import Box
from core.utils.config import TrackerConfig
from core.utils.errors import SampleSkipped
from features.data_io.sequence import SequenceDir
from features.tracker.crop import crop_window
from features.training.schemas import CropPair, TrainSample

logger = logging.getLogger(__name__)

MIN_FRAMES = 4
MAX_ATTEMPTS = 20


def jitter_box(box: Box, rng: np.random.Generator, center_jitter: float, scale_jitter: float) -> Box:
    """Shift the center by up to ``center_jitter * sqrt(w*h) / 2`` and rescale log-normally."""
    side = np.sqrt(box.w * box.h)
    dx, dy = (rng.uniform(size=2) - 0.5) * center_jitter * side
    scale = np.exp(rng.normal(0.0, scale_jitter, size=2))
    return Box.from_center(box.cx + dx, box.cy + dy, box.w * scale[0], box.h * scale[1])


def _crop_pair(seq: SequenceDir, z_frame: int, x_frame: int, rng: np.random.Generator, cfg: TrackerConfig):
    z_box, x_box = seq.groundtruth[z_frame], seq.groundtruth[x_frame]
    if z_box.is_degenerate or x_box.is_degenerate:
        raise SampleSkipped(f"{seq.name}: degenerate ground truth at frame {z_frame + 1} or {x_frame + 1}")
    z_rgb, z_tir = seq.frame(z_frame)
    x_rgb, x_tir = seq.frame(x_frame)
    zr, zt, _ = crop_window(z_rgb, z_tir, z_box, cfg.template_factor, cfg.template_size)
    center = jitter_box(x_box, rng, cfg.center_jitter, cfg.scale_jitter)
    xr, xt, mapping = crop_window(x_rgb, x_tir, center, cfg.search_factor, cfg.search_size, fallback=x_box)
    return CropPair(zr, xr, zt, xt), mapping.box_to_crop(x_box)


def sample_pairs(seq: SequenceDir, rng: np.random.Generator, cfg: TrackerConfig) -> TrainSample:
    """S uses two frames, T two others; all four are distinct."""
    if len(seq) < MIN_FRAMES:
        raise SampleSkipped(f"{seq.name}: {len(seq)} frames, need {MIN_FRAMES}")
    frames = tuple(int(f) for f in rng.choice(len(seq), size=4, replace=False))
    s_pair, gt = _crop_pair(seq, frames[0], frames[1], rng, cfg)
    t_pair, _ = _crop_pair(seq, frames[2], frames[3], rng, cfg)
    if not (0.0 <= gt.cx < cfg.search_size and 0.0 <= gt.cy < cfg.search_size):
        raise SampleSkipped(f"{seq.name}: target center left the search crop")
    return TrainSample(s_pair, t_pair, gt, frames, seq.name)


def draw_sample(sequences: Sequence[SequenceDir], seed: np.random.SeedSequence, cfg: TrackerConfig) -> TrainSample:
    """A sample from a uniformly chosen usable sequence; skipped draws are retried."""
    usable = [seq for seq in sequences if len(seq) >= MIN_FRAMES]
    if not usable:
        raise SampleSkipped(f"no sequence has at least {MIN_FRAMES} frames")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_ATTEMPTS):
        seq = usable[int(rng.integers(len(usable)))]
        try:
            return sample_pairs(seq, rng, cfg)
        except SampleSkipped as exc:
            logger.warning("skipped sample: %s", exc)
    raise SampleSkipped(f"no usable sample after {MAX_ATTEMPTS} attempts")
