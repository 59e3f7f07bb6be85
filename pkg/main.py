"""
Command-line entry point for the STMT RGBT tracker.

Subcommands: track, train, eval, synth, selftest, ablate. Usage errors exit
with 2, runtime failures with 1 after logging the traceback.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from config.settings import configure_logging
from core.utils.config import TrackerConfig, get_setting, load_config, load_model
from core.utils.errors import StmtError
from features.ablation.service import run_ablation
from features.data_io.sequence import GROUNDTRUTH_FILE, list_sequences, load_sequence, read_boxes, write_results
from features.data_io.synth import SynthSpec, synth_dataset, synth_sequence
from features.evaluation.report import write_report
from features.evaluation.schemas import SequenceReport
from features.evaluation.service import evaluate_sequence
from features.selftest.service import run_selftest
from features.tracker.network import init_network, load_checkpoint
from features.tracker.service import track_many, track_sequence
from features.training.service import train

logger = logging.getLogger(__name__)


def _config(args: argparse.Namespace) -> TrackerConfig:
    jobs = args.jobs if getattr(args, "jobs", None) else get_setting().JOBS
    return load_config(args.config, jobs=jobs)


def cmd_track(args: argparse.Namespace) -> int:
    cfg = _config(args)
    params = load_checkpoint(cfg, args.checkpoint) if args.checkpoint else init_network(cfg)
    sequences = [load_sequence(path) for path in args.seq]
    if len(sequences) == 1:
        boxes = [track_sequence(sequences[0], params, cfg, args.dump_cache)]
        targets = [Path(args.out)]
    else:
        if args.dump_cache:
            logger.warning("--dump-cache is only honored for a single sequence")
        boxes = track_many(sequences, params, cfg, cfg.jobs)
        targets = [Path(args.out) / f"{seq.name}.txt" for seq in sequences]
    for target, track in zip(targets, boxes):
        write_results(target, track)
        logger.info("results written to %s", target)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config(args)
    sequences = [load_sequence(path) for path in list_sequences(args.data)]
    train(sequences, cfg, args.out)
    return 0


def _pair_results(results: Path, gt: Path):
    """(name, result boxes, gt boxes) for a single file pair or a results dir against a dataset root."""
    if results.is_file():
        gt_file = gt / GROUNDTRUTH_FILE if gt.is_dir() else gt
        name = gt.name if gt.is_dir() else results.stem
        return [(name, read_boxes(results), read_boxes(gt_file))]
    pairs = []
    for seq_dir in list_sequences(gt):
        pairs.append((seq_dir.name, read_boxes(results / f"{seq_dir.name}.txt"), read_boxes(seq_dir / GROUNDTRUTH_FILE)))
    return pairs


def cmd_eval(args: argparse.Namespace) -> int:
    reports = [
        SequenceReport(seq=name, result=evaluate_sequence(boxes, gt))
        for name, boxes, gt in _pair_results(Path(args.results), Path(args.gt))
    ]
    write_report(reports, args.out)
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    spec = load_model(SynthSpec, args.spec) if args.spec else SynthSpec()
    if args.count is None:
        synth_sequence(spec, args.seed, args.out)
    else:
        synth_dataset(spec, args.seed, args.out, args.count)
    return 0


def cmd_selftest(args: argparse.Namespace) -> int:
    results = run_selftest(args.seed)
    for result in results:
        print(result.line())
    return 0 if all(r.passed for r in results) else 1


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _config(args)
    train_seqs = [load_sequence(path) for path in list_sequences(args.train_data)]
    eval_seqs = [load_sequence(path) for path in list_sequences(args.eval_data)]
    summary = run_ablation(train_seqs, eval_seqs, cfg, args.out, args.variants, args.seeds)
    print(summary.to_string(index=False))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stmt", description="RGBT tracking with spatio-temporal dynamic tokens")
    sub = parser.add_subparsers(dest="command", required=True)

    track = sub.add_parser("track", help="track sequences and write results files")
    track.add_argument("--config")
    track.add_argument("--seq", action="append", required=True, help="sequence directory (repeatable)")
    track.add_argument("--out", required=True, help="results file, or a directory for several sequences")
    track.add_argument("--checkpoint")
    track.add_argument("--jobs", type=int)
    track.add_argument("--dump-cache", dest="dump_cache")
    track.set_defaults(handler=cmd_track)

    train = sub.add_parser("train", help="train on a directory of sequences")
    train.add_argument("--config")
    train.add_argument("--data", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--jobs", type=int)
    train.set_defaults(handler=cmd_train)

    evaluate = sub.add_parser("eval", help="score results against ground truth")
    evaluate.add_argument("--results", required=True)
    evaluate.add_argument("--gt", required=True)
    evaluate.add_argument("--out", default="report.csv")
    evaluate.set_defaults(handler=cmd_eval)

    synth = sub.add_parser("synth", help="generate synthetic RGBT sequences")
    synth.add_argument("--spec")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)
    synth.add_argument("--count", type=int)
    synth.set_defaults(handler=cmd_synth)

    selftest = sub.add_parser("selftest", help="gradient, identity, memory and metric checks")
    selftest.add_argument("--seed", type=int, default=0)
    selftest.set_defaults(handler=cmd_selftest)

    ablate = sub.add_parser("ablate", help="train and compare STMT variants")
    ablate.add_argument("--config")
    ablate.add_argument("--train-data", dest="train_data", required=True)
    ablate.add_argument("--eval-data", dest="eval_data", required=True)
    ablate.add_argument("--out", required=True)
    ablate.add_argument("--variants", nargs="+", default=["full", "no_dynamic_tokens"])
    ablate.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    ablate.add_argument("--jobs", type=int)
    ablate.set_defaults(handler=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        runtime = get_setting()
    except ValidationError as exc:
        configure_logging()
        logger.error("invalid STMT_ environment settings: %s", exc)
        return 1
    configure_logging(runtime.LOG_LEVEL)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.handler(args)
    except (StmtError, OSError, ValidationError) as exc:
        logger.error("%s failed: %s", args.command, exc, exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
