import logging
import math
from typing import Sequence

import numpy as np

from core.models import Box
from core.utils.errors import ContractError, CountMismatchError
from features.evaluation.schemas import (
    NPR_AT,
    NPR_THRESHOLDS,
    PR_AT,
    PR_THRESHOLDS,
    SR_THRESHOLDS,
    OpeResult,
)

logger = logging.getLogger(__name__)


def iou(a: Box, b: Box) -> float:
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def center_error(a: Box, b: Box) -> float:
    return math.hypot(a.cx - b.cx, a.cy - b.cy)


def norm_center_error(pred: Box, gt: Box) -> float:
    """Center offset divided per axis by the ground-truth size."""
    if gt.is_degenerate:
        raise ContractError("normalized error needs a ground truth with positive size")
    return math.hypot((pred.cx - gt.cx) / gt.w, (pred.cy - gt.cy) / gt.h)


def ope_curves(
    errors: Sequence[float], norm_errors: Sequence[float], overlaps: Sequence[float], n_excluded: int = 0
) -> OpeResult:
    """PR/NPR count errors ``<=`` each threshold; SR counts overlaps ``>`` each threshold.

    SR is the mean of its 51 curve points.
    """
    if not len(errors) or not len(norm_errors) or not len(overlaps):
        raise ContractError("cannot evaluate an empty trace")
    err = np.asarray(errors, dtype=np.float64)
    nerr = np.asarray(norm_errors, dtype=np.float64)
    ovl = np.asarray(overlaps, dtype=np.float64)
    pr_curve = (err[None, :] <= PR_THRESHOLDS[:, None]).mean(axis=1)
    npr_curve = (nerr[None, :] <= NPR_THRESHOLDS[:, None]).mean(axis=1)
    sr_curve = (ovl[None, :] > SR_THRESHOLDS[:, None]).mean(axis=1)
    return OpeResult(
        center_errors=tuple(err.tolist()),
        norm_center_errors=tuple(nerr.tolist()),
        overlaps=tuple(ovl.tolist()),
        pr_curve=tuple(pr_curve.tolist()),
        npr_curve=tuple(npr_curve.tolist()),
        sr_curve=tuple(sr_curve.tolist()),
        pr20=float(pr_curve[PR_AT]),
        npr=float(npr_curve[NPR_AT]),
        sr=float(sr_curve.mean()),
        n_excluded=n_excluded,
    )


def evaluate_sequence(results: Sequence[Box], gt: Sequence[Box], skip_first: bool = True) -> OpeResult:
    """Frame 1 (initialization) and frames with degenerate ground truth are left out."""
    if len(results) != len(gt):
        raise CountMismatchError(f"{len(results)} result lines for {len(gt)} ground-truth lines")
    start = 1 if skip_first else 0
    errors, norm_errors, overlaps = [], [], []
    excluded = 0
    for pred, truth in zip(results[start:], gt[start:]):
        if truth.is_degenerate:
            excluded += 1
            continue
        errors.append(center_error(pred, truth))
        norm_errors.append(norm_center_error(pred, truth))
        overlaps.append(iou(pred, truth))
    if excluded:
        logger.warning("excluded %d frames with degenerate ground truth", excluded)
    return ope_curves(errors, norm_errors, overlaps, excluded)
