"""Eval report files: CSV summary, aligned text table and raw curve CSVs."""

import logging
from pathlib import Path
from typing import List, Sequence, Union

import pandas as pd

from core.utils.files import atomic_write_text
from features.evaluation.schemas import NPR_THRESHOLDS, PR_THRESHOLDS, SR_THRESHOLDS, SequenceReport

logger = logging.getLogger(__name__)

COLUMNS = ["seq", "n_frames", "PR20", "NPR", "SR"]


def summary_frame(reports: Sequence[SequenceReport]) -> pd.DataFrame:
    return pd.DataFrame([r.row() for r in reports], columns=COLUMNS)


def curves_frame(report: SequenceReport) -> pd.DataFrame:
    result = report.result
    return pd.DataFrame(
        {
            "pr_threshold": PR_THRESHOLDS,
            "pr": result.pr_curve,
            "npr_threshold": NPR_THRESHOLDS,
            "npr": result.npr_curve,
            "sr_threshold": SR_THRESHOLDS,
            "sr": result.sr_curve,
        }
    )


def render_csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format="%.3f", lineterminator="\n")


def render_text(frame: pd.DataFrame) -> str:
    table = frame.copy()
    for column in ("PR20", "NPR", "SR"):
        table[column] = table[column].map(lambda v: f"{v:.3f}")
    lines = [table.to_string(index=False)]
    if len(frame) > 1:
        lines.append(
            f"mean PR20={frame['PR20'].mean():.3f} NPR={frame['NPR'].mean():.3f} SR={frame['SR'].mean():.3f}"
        )
    return "\n".join(lines) + "\n"


def write_report(reports: Sequence[SequenceReport], out: Union[str, Path]) -> List[Path]:
    """``out`` gets the CSV; ``out.txt`` the text table; ``<seq>.curves.csv`` sits alongside."""
    out = Path(out)
    frame = summary_frame(reports)
    written = [
        atomic_write_text(out, render_csv(frame)),
        atomic_write_text(out.with_name(out.name + ".txt"), render_text(frame)),
    ]
    for report in reports:
        curves = out.with_name(f"{report.seq}.curves.csv")
        written.append(atomic_write_text(curves, render_csv(curves_frame(report))))
    for _, row in frame.iterrows():
        logger.info("%s: PR20=%.3f NPR=%.3f SR=%.3f", row["seq"], row["PR20"], row["NPR"], row["SR"])
    return written
