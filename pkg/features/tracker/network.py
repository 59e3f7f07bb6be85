"""The full parameter set and one forward pass: embed -> backbone + STMT -> restore -> head."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Union

import numpy as np

from core.models import CacheEntry, Grid, ModalImage, Modality, Role, TokenSeq
from core.tensor import Tensor, iter_parameters
from core.utils.checkpoint import load_tensors, save_tensors
from core.utils.config import TrackerConfig
from core.utils.errors import ConfigError
from features.embedding.schemas import EmbedParams
from features.embedding.service import embed, normalize_pixels, split_tokens
from features.encoder.schemas import BackboneOutput, EncoderLayerParams
from features.encoder.service import run_backbone
from features.memory.service import restore_tokens
from features.stmt.schemas import StmtLayerParams
from features.stmt.service import make_stmt_hooks
from features.tracker.head import run_head
from features.tracker.schemas import HeadOutput, HeadParams

logger = logging.getLogger(__name__)

GROUPS = ("backbone", "module", "head")


@dataclass
class NetworkParams:
    embed: EmbedParams
    layers: List[EncoderLayerParams]
    stmt: Dict[int, StmtLayerParams]
    head: HeadParams


@dataclass
class ForwardResult:
    head: HeadOutput
    backbone: BackboneOutput
    search: Dict[Modality, TokenSeq]


def init_network(cfg: TrackerConfig, seed: Optional[int] = None) -> NetworkParams:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    return NetworkParams(
        embed=EmbedParams.create(cfg, rng),
        layers=[EncoderLayerParams.create(cfg, rng) for _ in range(cfg.depth)],
        stmt={layer: StmtLayerParams.create(cfg, rng) for layer in cfg.insert_layers},
        head=HeadParams.create(cfg, rng),
    )


def parameter_groups(params: NetworkParams) -> Dict[str, List[Tensor]]:
    """Backbone (embedding + encoder), module (STMT) and head, in learning-rate order."""
    return {
        "backbone": [t for _, t in iter_parameters([params.embed, params.layers])],
        "module": [t for _, t in iter_parameters(params.stmt)],
        "head": [t for _, t in iter_parameters(params.head)],
    }


def save_checkpoint(params: NetworkParams, path: Union[str, Path]) -> Path:
    return save_tensors(path, {name: tensor.data for name, tensor in iter_parameters(params)})


def load_checkpoint(cfg: TrackerConfig, path: Union[str, Path]) -> NetworkParams:
    params = init_network(cfg)
    stored = load_tensors(path)
    expected = dict(iter_parameters(params))
    missing = sorted(set(expected) - set(stored))
    unknown = sorted(set(stored) - set(expected))
    if missing or unknown:
        raise ConfigError(f"{path}: checkpoint does not match config (missing {missing[:3]}, unknown {unknown[:3]})")
    for name, tensor in expected.items():
        if stored[name].shape != tensor.shape:
            raise ConfigError(f"{path}: {name} has shape {stored[name].shape}, expected {tensor.shape}")
        tensor.data[...] = stored[name]
    logger.info("loaded %d tensors from %s", len(expected), path)
    return params


def embed_image(img: ModalImage, role: Role, params: NetworkParams, cfg: TrackerConfig) -> TokenSeq:
    pixels = normalize_pixels(img.pixels, cfg.pixel_mean, cfg.pixel_std)
    return embed(ModalImage(pixels, img.modality), role, params.embed, cfg.patch_size)


def forward_tokens(
    z: Mapping[Modality, TokenSeq],
    x: Mapping[Modality, TokenSeq],
    params: NetworkParams,
    cfg: TrackerConfig,
    entries: Optional[Mapping[int, CacheEntry]] = None,
) -> ForwardResult:
    """Backbone with STMT hooks, then restore and head.

    Without ``entries`` only modality enhancement runs at the insertion layers.
    """
    hooks = make_stmt_hooks(params.stmt, cfg, entries, dynamic=entries is not None)
    preserve = cfg.insert_layers if cfg.enable_dynamic_tokens else ()
    eliminate_at = cfg.insert_layers if cfg.elimination else ()
    out = run_backbone(
        z[Modality.RGB], x[Modality.RGB], z[Modality.TIR], x[Modality.TIR],
        params.layers, cfg, hooks=hooks, preserve_layers=preserve, eliminate_layers=eliminate_at,
    )
    grid = Grid(cfg.search_grid, cfg.search_grid)
    search: Dict[Modality, TokenSeq] = {}
    for modality, joint in ((Modality.RGB, out.rgb), (Modality.TIR, out.tir)):
        _, seq = split_tokens(joint, joint.n_z)
        record = out.records.get(modality)
        search[modality] = restore_tokens(seq, record, grid) if record is not None else seq
    head = run_head(search[Modality.RGB], search[Modality.TIR], params.head)
    return ForwardResult(head, out, search)


def forward(
    z_rgb: ModalImage,
    x_rgb: ModalImage,
    z_tir: ModalImage,
    x_tir: ModalImage,
    params: NetworkParams,
    cfg: TrackerConfig,
    entries: Optional[Mapping[int, CacheEntry]] = None,
) -> ForwardResult:
    z = {
        Modality.RGB: embed_image(z_rgb, Role.TEMPLATE, params, cfg),
        Modality.TIR: embed_image(z_tir, Role.TEMPLATE, params, cfg),
    }
    x = {
        Modality.RGB: embed_image(x_rgb, Role.SEARCH, params, cfg),
        Modality.TIR: embed_image(x_tir, Role.SEARCH, params, cfg),
    }
    return forward_tokens(z, x, params, cfg, entries)
