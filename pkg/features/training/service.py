"""Training loop: simulated dynamic tokens from T, loss on S, AdamW update, periodic checkpoints."""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from core.models import CacheEntry, Modality, Role, TokenSeq
from core.tensor import Tensor, backward, no_grad, parameter_list, zero_grads
from core.utils.config import TrackerConfig, save_config
from core.utils.errors import NonFiniteError
from core.utils.files import atomic_write_text
from features.data_io.sequence import SequenceDir
from features.encoder.service import run_backbone
from features.stmt.service import make_stmt_hooks
from features.tracker.network import NetworkParams, embed_image, forward, init_network, parameter_groups, save_checkpoint
from features.training.loss import compute_loss
from features.training.optim import AdamW
from features.training.sampling import draw_sample
from features.training.schemas import CropPair, StepLog, TrainSample

logger = logging.getLogger(__name__)


def lr_at(step: int, cfg: TrackerConfig) -> float:
    """Module learning rate for 1-based ``step``; one decay after ``lr_decay_at`` of training."""
    if step > cfg.lr_decay_at * cfg.train_steps:
        return cfg.lr * cfg.lr_decay_factor
    return cfg.lr


def _simulate(t: CropPair, params: NetworkParams, cfg: TrackerConfig) -> Dict[int, CacheEntry]:
    if not cfg.insert_layers:
        return {}
    last = max(cfg.insert_layers)
    z_v = embed_image(t.z_rgb, Role.TEMPLATE, params, cfg)
    x_v = embed_image(t.x_rgb, Role.SEARCH, params, cfg)
    z_t = embed_image(t.z_tir, Role.TEMPLATE, params, cfg)
    x_t = embed_image(t.x_tir, Role.SEARCH, params, cfg)
    # staging at the last insertion layer precedes its hook
    hooks = {
        layer: hook for layer, hook in make_stmt_hooks(params.stmt, cfg, dynamic=False).items() if layer < last
    }
    out = run_backbone(
        z_v, x_v, z_t, x_t, params.layers[:last], cfg, hooks=hooks, preserve_layers=cfg.insert_layers
    )
    entries: Dict[int, CacheEntry] = {}
    for layer, stage in out.staged.items():
        rgb, tir = stage.template[Modality.RGB], stage.template[Modality.TIR]
        entries[layer] = (
            TokenSeq(rgb.tokens, Role.DYNAMIC, Modality.RGB, grid=rgb.grid),
            TokenSeq(tir.tokens, Role.DYNAMIC, Modality.TIR, grid=tir.grid),
        )
    return entries


def simulate_dynamic_tokens(t: CropPair, params: NetworkParams, cfg: TrackerConfig) -> Dict[int, CacheEntry]:
    """Template-part tokens of T at every insertion layer, standing in for cached dynamic tokens.

    Detached unless ``cfg.detach_dynamic`` is false.
    """
    if cfg.detach_dynamic:
        with no_grad():
            return _simulate(t, params, cfg)
    return _simulate(t, params, cfg)


def sample_loss(sample: TrainSample, params: NetworkParams, cfg: TrackerConfig) -> Tensor:
    entries = None
    if cfg.enable_dynamic_tokens and cfg.tf_layers:
        entries = simulate_dynamic_tokens(sample.t, params, cfg)
    s = sample.s
    result = forward(s.z_rgb, s.x_rgb, s.z_tir, s.x_tir, params, cfg, entries)
    return compute_loss(result.head, sample.gt, cfg)


def train_step(batch: Sequence[TrainSample], params: NetworkParams, opt: AdamW, cfg: TrackerConfig, lr: float) -> float:
    zero_grads(params)
    total: Optional[Tensor] = None
    for sample in batch:
        loss = sample_loss(sample, params, cfg)
        total = loss if total is None else total + loss
    total = total * (1.0 / len(batch))
    value = total.item()
    if not np.isfinite(value):
        raise NonFiniteError(f"loss became {value} at step {opt.state.step + 1}")
    backward(total, parameter_list(params))
    opt.step(lr)
    return value


def prepare_batch(
    sequences: Sequence[SequenceDir], step: int, cfg: TrackerConfig, pool: Optional[ThreadPoolExecutor] = None
) -> List[TrainSample]:
    """Each item draws from its own seed so the batch is identical regardless of ``jobs``."""
    seeds = np.random.SeedSequence([cfg.seed, step]).spawn(cfg.batch_size)
    if pool is None:
        return [draw_sample(sequences, seed, cfg) for seed in seeds]
    return list(pool.map(lambda seed: draw_sample(sequences, seed, cfg), seeds))


def write_loss_log(logs: Sequence[StepLog], path: Union[str, Path]) -> Path:
    frame = pd.DataFrame([log.model_dump() for log in logs], columns=["step", "lr", "loss"])
    return atomic_write_text(path, frame.to_csv(index=False, float_format="%.8g", lineterminator="\n"))


def train(
    sequences: Sequence[SequenceDir],
    cfg: TrackerConfig,
    out_dir: Union[str, Path],
    params: Optional[NetworkParams] = None,
) -> NetworkParams:
    """Writes ``checkpoint_<step>.bin`` every ``checkpoint_every`` steps, ``model.bin``, ``loss.csv`` and ``config.cfg``."""
    out_dir = Path(out_dir)
    params = params or init_network(cfg)
    opt = AdamW.from_config(parameter_groups(params), cfg)
    save_config(cfg, out_dir / "config.cfg")
    logs: List[StepLog] = []
    logger.info("training %d steps on %d sequences", cfg.train_steps, len(sequences))

    pool = ThreadPoolExecutor(max_workers=cfg.jobs) if cfg.jobs > 1 else None
    try:
        for step in range(1, cfg.train_steps + 1):
            batch = prepare_batch(sequences, step, cfg, pool)
            lr = lr_at(step, cfg)
            loss = train_step(batch, params, opt, cfg, lr)
            logs.append(StepLog(step=step, lr=lr, loss=loss))
            if step % cfg.log_every == 0 or step == 1:
                logger.info("step %d/%d loss %.5f lr %.2e", step, cfg.train_steps, loss, lr)
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                path = save_checkpoint(params, out_dir / f"checkpoint_{step:06d}.bin")
                logger.info("checkpoint written to %s", path)
    finally:
        if pool is not None:
            pool.shutdown()

    save_checkpoint(params, out_dir / "model.bin")
    write_loss_log(logs, out_dir / "loss.csv")
    return params
