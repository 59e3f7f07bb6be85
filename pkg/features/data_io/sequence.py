"""Sequence directory layout::

    <seq>/visible/000001.ppm ...
    <seq>/infrared/000001.pgm ...
    <seq>/groundtruth.txt          one "x,y,w,h" line per frame
"""

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from core.models import Box, ModalImage, Modality
from core.utils.errors import CountMismatchError, GroundTruthLineError
from core.utils.files import atomic_write_text
from features.data_io.netpbm import read_netpbm, to_unit, write_netpbm

logger = logging.getLogger(__name__)

VISIBLE_DIR = "visible"
INFRARED_DIR = "infrared"
GROUNDTRUTH_FILE = "groundtruth.txt"
FIELD_SPLIT = re.compile(r"[,\s]+")


def frame_name(index: int, suffix: str) -> str:
    """1-based frame number -> ``000001.ppm``."""
    return f"{index:06d}.{suffix}"


def parse_gt_line(line: str, lineno: Optional[int] = None, path: Union[str, Path, None] = None) -> Box:
    fields = [f for f in FIELD_SPLIT.split(line.strip()) if f]
    if len(fields) != 4:
        raise GroundTruthLineError(f"expected 4 fields, got {len(fields)} in {line.strip()!r}", path, lineno)
    try:
        x, y, w, h = (float(f) for f in fields)
        return Box(x=x, y=y, w=w, h=h)
    except (ValueError, ValidationError) as exc:
        raise GroundTruthLineError(f"bad box {line.strip()!r}: {exc}", path, lineno) from exc


def read_boxes(path: Union[str, Path]) -> List[Box]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    return [parse_gt_line(line, lineno, path) for lineno, line in enumerate(lines, start=1)]


def write_boxes(path: Union[str, Path], boxes: Sequence[Box]) -> Path:
    return atomic_write_text(path, "".join(box.to_line() + "\n" for box in boxes))


read_results = read_boxes
write_results = write_boxes


def _count_frames(directory: Path, suffix: str) -> int:
    count = 0
    while (directory / frame_name(count + 1, suffix)).is_file():
        count += 1
    return count


@dataclass
class SequenceDir:
    """Validated handle; frames are decoded on access."""

    path: Path
    groundtruth: List[Box]

    @property
    def name(self) -> str:
        return self.path.name

    def __len__(self) -> int:
        return len(self.groundtruth)

    def frame(self, index: int) -> Tuple[ModalImage, ModalImage]:
        """0-based ``index`` -> (rgb, tir) in [0, 1]."""
        if not 0 <= index < len(self):
            raise IndexError(f"frame {index} outside 0..{len(self) - 1}")
        rgb = read_netpbm(self.path / VISIBLE_DIR / frame_name(index + 1, "ppm"))
        tir = read_netpbm(self.path / INFRARED_DIR / frame_name(index + 1, "pgm"))
        return ModalImage(to_unit(rgb), Modality.RGB), ModalImage(to_unit(tir), Modality.TIR)

    def frames(self, start: int = 0) -> Iterator[Tuple[ModalImage, ModalImage]]:
        for index in range(start, len(self)):
            yield self.frame(index)


def load_sequence(path: Union[str, Path]) -> SequenceDir:
    path = Path(path)
    n_rgb = _count_frames(path / VISIBLE_DIR, "ppm")
    n_tir = _count_frames(path / INFRARED_DIR, "pgm")
    gt_path = path / GROUNDTRUTH_FILE
    if not gt_path.is_file():
        raise CountMismatchError("missing groundtruth file", gt_path)
    groundtruth = read_boxes(gt_path)
    if not (n_rgb == n_tir == len(groundtruth)) or n_rgb == 0:
        raise CountMismatchError(
            f"{n_rgb} visible frames, {n_tir} infrared frames, {len(groundtruth)} groundtruth lines", path
        )
    logger.info("loaded sequence %s with %d frames", path.name, n_rgb)
    return SequenceDir(path, groundtruth)


def list_sequences(root: Union[str, Path]) -> List[Path]:
    """Subdirectories holding a groundtruth file, sorted by name."""
    root = Path(root)
    if (root / GROUNDTRUTH_FILE).is_file():
        return [root]
    return sorted(p for p in root.iterdir() if (p / GROUNDTRUTH_FILE).is_file())


def write_sequence(
    out_dir: Union[str, Path], rgb: Sequence[np.ndarray], tir: Sequence[np.ndarray], gt: Sequence[Box]
) -> Path:
    """Write ``uint8`` frames and ground truth in the directory layout above."""
    if not len(rgb) == len(tir) == len(gt):
        raise CountMismatchError(f"{len(rgb)} rgb, {len(tir)} tir frames and {len(gt)} boxes", out_dir)
    out_dir = Path(out_dir)
    for index, (rgb_frame, tir_frame) in enumerate(zip(rgb, tir), start=1):
        write_netpbm(out_dir / VISIBLE_DIR / frame_name(index, "ppm"), rgb_frame)
        write_netpbm(out_dir / INFRARED_DIR / frame_name(index, "pgm"), tir_frame)
    write_boxes(out_dir / GROUNDTRUTH_FILE, gt)
    return out_dir
