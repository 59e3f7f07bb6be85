"""Deterministic synthetic RGBT sequences.

The target is a two-tone rectangle on RGB whose hue, aspect and lighting
drift over time; on TIR it is a warm intensity blob that ignores the RGB
lighting. Distractors look like the target on RGB but are cold on TIR.
Occluders cover part of the target without changing the ground truth.
"""

import colorsys
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Union

import numpy as np
from pydantic import Field

from core.models import Box
from core.utils.config import KeyValueModel
from core.utils.errors import SpecError
from features.data_io.netpbm import from_unit
from features.data_io.sequence import SequenceDir, load_sequence, write_sequence

logger = logging.getLogger(__name__)


class SynthSpec(KeyValueModel):
    length: int = Field(default=60, ge=1)
    width: int = Field(default=160, ge=8)
    height: int = Field(default=128, ge=8)
    min_target: float = Field(default=16.0, gt=0)
    max_target: float = Field(default=28.0, gt=0)

    # motion: random walk + constant drift, in pixels per frame
    step_std: float = Field(default=1.5, ge=0)
    drift_x: float = 0.6
    drift_y: float = 0.2
    scale_std: float = Field(default=0.01, ge=0)

    # appearance schedule
    hue_drift: float = 0.004
    aspect_drift: float = 0.003
    illumination_amplitude: float = Field(default=0.35, ge=0, le=0.9)
    illumination_period: int = Field(default=40, ge=1)
    tir_drift: float = 0.002

    distractors: int = Field(default=2, ge=0)
    occlusions: int = Field(default=1, ge=0)
    occlusion_length: int = Field(default=6, ge=1)
    noise: float = Field(default=0.02, ge=0)


@dataclass
class SynthFrames:
    rgb: List[np.ndarray] = field(default_factory=list)  # uint8 [H, W, 3]
    tir: List[np.ndarray] = field(default_factory=list)  # uint8 [H, W, 1]
    gt: List[Box] = field(default_factory=list)
    masks: List[np.ndarray] = field(default_factory=list)  # visible target pixels
    occluded: List[bool] = field(default_factory=list)


def box_mask(box: Box, width: int, height: int) -> np.ndarray:
    """Pixels whose centers fall inside ``[x, x+w) x [y, y+h)``."""
    cols = np.arange(width) + 0.5
    rows = np.arange(height) + 0.5
    inside_x = (cols >= box.x) & (cols < box.x + box.w)
    inside_y = (rows >= box.y) & (rows < box.y + box.h)
    return inside_y[:, None] & inside_x[None, :]


def _reflect(value: float, low: float, high: float) -> float:
    if high <= low:
        return low
    span = high - low
    offset = (value - low) % (2.0 * span)
    return low + (offset if offset <= span else 2.0 * span - offset)


def _check(spec: SynthSpec) -> None:
    if spec.min_target > spec.max_target:
        raise SpecError(f"min_target {spec.min_target} exceeds max_target {spec.max_target}")
    if spec.max_target * 1.5 >= min(spec.width, spec.height):
        raise SpecError(
            f"target up to {spec.max_target * 1.5:.1f}px does not fit a {spec.width}x{spec.height} image"
        )


def render_sequence(spec: SynthSpec, seed: int) -> SynthFrames:
    _check(spec)
    rng = np.random.default_rng(seed)
    w_img, h_img = spec.width, spec.height

    side = rng.uniform(spec.min_target, spec.max_target)
    aspect = rng.uniform(0.75, 1.25)
    hue = rng.uniform(0.0, 1.0)
    cx = rng.uniform(0.3, 0.7) * w_img
    cy = rng.uniform(0.3, 0.7) * h_img
    drift_sign = rng.choice([-1.0, 1.0], size=2)
    gradient = np.linspace(0.15, 0.45, w_img)[None, :, None] * rng.uniform(0.6, 1.0, size=3)[None, None, :]
    background_rgb = np.broadcast_to(gradient, (h_img, w_img, 3))

    distractors = [
        [rng.uniform(0, w_img), rng.uniform(0, h_img), rng.uniform(spec.min_target, spec.max_target)]
        for _ in range(spec.distractors)
    ]
    starts = sorted(rng.integers(1, max(spec.length, 2), size=spec.occlusions).tolist())
    occlusion_frames = {t for s in starts for t in range(s, s + spec.occlusion_length)}

    frames = SynthFrames()
    for t in range(spec.length):
        if t:
            cx += spec.drift_x * drift_sign[0] + rng.normal(0.0, spec.step_std)
            cy += spec.drift_y * drift_sign[1] + rng.normal(0.0, spec.step_std)
            side *= float(np.exp(rng.normal(0.0, spec.scale_std)))
            side = float(np.clip(side, spec.min_target, spec.max_target))
            aspect *= float(np.exp(spec.aspect_drift * np.sin(t / 7.0)))
            aspect = float(np.clip(aspect, 0.67, 1.5))
        w = side * np.sqrt(aspect)
        h = side / np.sqrt(aspect)
        cx = _reflect(cx, w / 2.0, w_img - w / 2.0)
        cy = _reflect(cy, h / 2.0, h_img - h / 2.0)
        box = Box.from_center(cx, cy, w, h)

        light = 1.0 + spec.illumination_amplitude * np.sin(2.0 * np.pi * t / spec.illumination_period)
        rgb = background_rgb.copy()
        tir = np.full((h_img, w_img, 1), 0.15)
        color = np.array(colorsys.hsv_to_rgb((hue + spec.hue_drift * t) % 1.0, 0.8, 0.9))
        second = np.array(colorsys.hsv_to_rgb((hue + 0.5 + spec.hue_drift * t) % 1.0, 0.8, 0.9))

        for d in distractors:
            d[0] = _reflect(d[0] + rng.normal(0.0, 2.0), 0.0, w_img - d[2])
            d[1] = _reflect(d[1] + rng.normal(0.0, 2.0), 0.0, h_img - d[2])
            dmask = box_mask(Box(x=d[0], y=d[1], w=d[2], h=d[2]), w_img, h_img)
            rgb[dmask] = color
            tir[dmask] = 0.25

        mask = box_mask(box, w_img, h_img)
        rows = np.arange(h_img)[:, None] + 0.5
        cols = np.arange(w_img)[None, :] + 0.5
        upper = mask & (rows < box.cy)
        rgb[upper] = color
        rgb[mask & ~upper] = second
        bump = np.exp(-(((cols - box.cx) / (0.5 * w)) ** 2 + ((rows - box.cy) / (0.5 * h)) ** 2))
        warmth = float(np.clip(0.85 - spec.tir_drift * t, 0.45, 1.0))
        tir[mask, 0] = warmth * (0.7 + 0.3 * bump[mask])

        occluded = t in occlusion_frames
        visible = mask.copy()
        if occluded:
            cover = Box(x=box.x, y=box.y, w=box.w * 0.5, h=box.h)
            cover_mask = box_mask(cover, w_img, h_img)
            rgb[cover_mask] = 0.35
            tir[cover_mask] = 0.2
            visible &= ~cover_mask

        rgb = rgb * light + rng.normal(0.0, spec.noise, size=rgb.shape)
        tir = tir + rng.normal(0.0, spec.noise, size=tir.shape)
        frames.rgb.append(from_unit(rgb))
        frames.tir.append(from_unit(tir))
        frames.gt.append(box)
        frames.masks.append(visible)
        frames.occluded.append(occluded)
    return frames


def synth_sequence(spec: SynthSpec, seed: int, out_dir: Union[str, Path]) -> SequenceDir:
    frames = render_sequence(spec, seed)
    write_sequence(out_dir, frames.rgb, frames.tir, frames.gt)
    return load_sequence(out_dir)


def sequence_seeds(seed: int, count: int) -> List[int]:
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1)[0]) for child in children]


def synth_dataset(spec: SynthSpec, seed: int, out_root: Union[str, Path], count: int) -> List[SequenceDir]:
    """``count`` sequences named ``seq_0001`` ... under ``out_root``."""
    out_root = Path(out_root)
    sequences = [
        synth_sequence(spec, child, out_root / f"seq_{index:04d}")
        for index, child in enumerate(sequence_seeds(seed, count), start=1)
    ]
    logger.info("wrote %d synthetic sequences to %s", count, out_root)
    return sequences
