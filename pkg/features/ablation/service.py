"""Full model against its ablations: same data, same seeds, mean SR/PR/NPR per variant."""

import logging
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Union

import pandas as pd

from core.utils.config import TrackerConfig, build_model
from core.utils.errors import ConfigError
from core.utils.files import atomic_write_text
from features.data_io.sequence import SequenceDir
from features.evaluation.schemas import SequenceReport
from features.evaluation.service import evaluate_sequence
from features.tracker.service import track_many
from features.training.service import train

logger = logging.getLogger(__name__)

VARIANTS: Dict[str, Dict[str, object]] = {
    "full": {},
    "no_dynamic_tokens": {"enable_dynamic_tokens": False},
    "no_modality_enhancement": {"enable_modality_enhancement": False},
    "baseline_rgbt": {"insert_layers": (), "tf_layers": ()},
}


def variant_config(cfg: TrackerConfig, variant: str, seed: int) -> TrackerConfig:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    return build_model(TrackerConfig, {**cfg.model_dump(), **VARIANTS[variant], "seed": seed}, variant)


def evaluate_tracks(sequences: Sequence[SequenceDir], tracks: Sequence[Sequence]) -> List[SequenceReport]:
    return [
        SequenceReport(seq=seq.name, result=evaluate_sequence(boxes, seq.groundtruth))
        for seq, boxes in zip(sequences, tracks)
    ]


def run_ablation(
    train_sequences: Sequence[SequenceDir],
    eval_sequences: Sequence[SequenceDir],
    cfg: TrackerConfig,
    out_dir: Union[str, Path],
    variants: Sequence[str] = ("full", "no_dynamic_tokens"),
    seeds: Sequence[int] = (0, 1, 2),
) -> pd.DataFrame:
    """Writes ``runs.csv`` (one row per variant and seed) and ``ablation.csv`` (means per variant)."""
    out_dir = Path(out_dir)
    rows: List[Mapping[str, object]] = []
    for variant in variants:
        for seed in seeds:
            variant_cfg = variant_config(cfg, variant, seed)
            params = train(train_sequences, variant_cfg, out_dir / f"{variant}_seed{seed}")
            reports = evaluate_tracks(eval_sequences, track_many(eval_sequences, params, variant_cfg, cfg.jobs))
            frame = pd.DataFrame([r.row() for r in reports])
            row = {
                "variant": variant,
                "seed": seed,
                "SR": frame["SR"].mean(),
                "PR20": frame["PR20"].mean(),
                "NPR": frame["NPR"].mean(),
            }
            logger.info("%s seed %d: SR=%.3f PR20=%.3f NPR=%.3f", variant, seed, row["SR"], row["PR20"], row["NPR"])
            rows.append(row)

    runs = pd.DataFrame(rows, columns=["variant", "seed", "SR", "PR20", "NPR"])
    summary = runs.groupby("variant", sort=False)[["SR", "PR20", "NPR"]].mean().reset_index()
    atomic_write_text(out_dir / "runs.csv", runs.to_csv(index=False, float_format="%.4f", lineterminator="\n"))
    atomic_write_text(out_dir / "ablation.csv", summary.to_csv(index=False, float_format="%.4f", lineterminator="\n"))
    return summary
