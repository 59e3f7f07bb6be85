from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

PR_THRESHOLDS = np.arange(51, dtype=np.float64)  # pixels
NPR_THRESHOLDS = np.arange(51, dtype=np.float64) / 100.0
SR_THRESHOLDS = np.arange(51, dtype=np.float64) / 51.0  # strict ">" comparison
PR_AT = 20
NPR_AT = 20


class OpeResult(BaseModel):
    """Per-frame traces, curves and scalars for one sequence."""

    model_config = ConfigDict(frozen=True)

    center_errors: Tuple[float, ...]
    norm_center_errors: Tuple[float, ...]
    overlaps: Tuple[float, ...]
    pr_curve: Tuple[float, ...]
    npr_curve: Tuple[float, ...]
    sr_curve: Tuple[float, ...]
    pr20: float
    npr: float
    sr: float
    n_excluded: int = 0

    @field_validator("overlaps")
    @classmethod
    def unit_interval(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if any(not 0.0 <= v <= 1.0 for v in value):
            raise ValueError("overlaps must lie in [0, 1]")
        return value

    @property
    def n_frames(self) -> int:
        return len(self.overlaps)


class SequenceReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    seq: str
    result: OpeResult

    def row(self) -> dict:
        return {
            "seq": self.seq,
            "n_frames": self.result.n_frames,
            "PR20": self.result.pr20,
            "NPR": self.result.npr,
            "SR": self.result.sr,
        }
