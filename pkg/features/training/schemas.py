from dataclasses import dataclass
from typing import Tuple

from pydantic import BaseModel, ConfigDict

from core.models import Box, ModalImage


@dataclass(frozen=True)
class CropPair:
    """Template and search crops of one modality pair."""

    z_rgb: ModalImage
    x_rgb: ModalImage
    z_tir: ModalImage
    x_tir: ModalImage


@dataclass(frozen=True)
class TrainSample:
    s: CropPair
    t: CropPair
    gt: Box  # target in S search-crop pixels
    frames: Tuple[int, int, int, int]  # S template, S search, T template, T search
    sequence: str = ""


class StepLog(BaseModel):
    model_config = ConfigDict(frozen=True)

    step: int
    lr: float
    loss: float
