"""Encoder stack shared by both modality streams, with STMT hooks and candidate elimination."""

import logging
import math
from typing import Callable, Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from core.models import Modality, Role, TokenSeq
from core.tensor import layer_norm, mlp_block, multi_head_attention
from core.utils.config import TrackerConfig
from core.utils.errors import ConfigError, ContractError
from features.embedding.service import join_tokens, split_tokens
from features.encoder.schemas import BackboneOutput, EliminationRecord, EncoderLayerParams, StagedLayer

logger = logging.getLogger(__name__)

# hook(layer, rgb_joint, tir_joint) -> (rgb_joint, tir_joint)
Hook = Callable[[int, TokenSeq, TokenSeq], Tuple[TokenSeq, TokenSeq]]

MODALITIES = (Modality.RGB, Modality.TIR)


def encoder_layer(
    h: TokenSeq,
    params: EncoderLayerParams,
    heads: int,
    mlp_ratio: float,
    eps: float = 1e-6,
) -> Tuple[TokenSeq, np.ndarray]:
    """Pre-norm block ``h + Attn(LN(h))`` then ``+ MLP(LN(.))``.

    Returns the new sequence and the attention weights ``[heads, N, N]``.
    """
    x = h.tokens
    normed = layer_norm(x, params.norm1.gamma, params.norm1.beta, eps)
    attended, weights = multi_head_attention(normed, normed, params.attn, heads)
    x = x + attended
    x = x + mlp_block(layer_norm(x, params.norm2.gamma, params.norm2.beta, eps), mlp_ratio, params.mlp)
    return h.with_tokens(x), weights


def eliminate(
    h: TokenSeq,
    n_z: int,
    keep_rate: float,
    attn: np.ndarray,
    layer_index: int = 0,
    prior: Optional[EliminationRecord] = None,
) -> Tuple[TokenSeq, EliminationRecord]:
    """Keep the ``ceil(keep_rate * N_search)`` search tokens the template attends to most.

    Scores are the mean attention from every template token (and head) to
    each search token; ties keep the lower original index. Template tokens
    always survive. ``prior`` maps current positions to the original search
    ordering when elimination already ran at an earlier layer.
    """
    if not 0.0 < keep_rate <= 1.0:
        raise ConfigError(f"keep_rate={keep_rate} must lie in (0, 1]")
    n_search = len(h) - n_z
    current = prior.kept_indices if prior is not None else tuple(range(n_search))
    original_len = prior.original_len if prior is not None else n_search
    if len(current) != n_search:
        raise ContractError(f"record lists {len(current)} tokens, sequence has {n_search}")
    weights = np.asarray(attn, dtype=np.float64)
    if weights.ndim == 2:
        weights = weights[None]
    scores = weights[:, :n_z, n_z:].mean(axis=1).mean(axis=0)
    keep = math.ceil(keep_rate * n_search)
    positions = np.sort(np.argsort(-scores, kind="stable")[:keep])
    record = EliminationRecord(
        layer_index=layer_index,
        kept_indices=tuple(int(current[p]) for p in positions),
        original_len=original_len,
    )
    if keep == n_search:
        return h, record
    rows = np.concatenate([np.arange(n_z), n_z + positions])
    pruned = TokenSeq(h.tokens[rows], Role.JOINT, h.modality, layout=h.layout, n_z=n_z)
    logger.debug("layer %d kept %d/%d search tokens", layer_index, keep, n_search)
    return pruned, record


def run_backbone(
    z_rgb: TokenSeq,
    x_rgb: TokenSeq,
    z_tir: TokenSeq,
    x_tir: TokenSeq,
    layers: Sequence[EncoderLayerParams],
    cfg: TrackerConfig,
    hooks: Optional[Mapping[int, Hook]] = None,
    preserve_layers: Iterable[int] = (),
    eliminate_layers: Iterable[int] = (),
) -> BackboneOutput:
    """Run both streams through the shared encoder layers (1-indexed).

    After layer ``l``: elimination (if listed), staging of template/search
    tokens (if ``l`` is a preserve layer), then the hook for ``l``.
    """
    hooks = dict(hooks or {})
    preserve = set(preserve_layers)
    eliminate_at = set(eliminate_layers)
    depth = len(layers)
    for layer in sorted(set(hooks) | preserve | eliminate_at):
        if not 1 <= layer <= depth:
            raise ConfigError(f"layer {layer} outside 1..{depth}")

    n_z = len(z_rgb)
    joint: Dict[Modality, TokenSeq] = {
        Modality.RGB: join_tokens(z_rgb, x_rgb),
        Modality.TIR: join_tokens(z_tir, x_tir),
    }
    records: Dict[Modality, Optional[EliminationRecord]] = {m: None for m in MODALITIES}
    staged: Dict[int, StagedLayer] = {}

    for index, params in enumerate(layers, start=1):
        for modality in MODALITIES:
            joint[modality], weights = encoder_layer(
                joint[modality], params, cfg.num_heads, cfg.mlp_ratio, cfg.ln_eps
            )
            if index in eliminate_at:
                joint[modality], records[modality] = eliminate(
                    joint[modality], n_z, cfg.keep_rate, weights, index, records[modality]
                )
        if index in preserve:
            parts = {m: split_tokens(joint[m], n_z) for m in MODALITIES}
            staged[index] = StagedLayer(
                search={m: parts[m][1] for m in MODALITIES},
                template={m: parts[m][0] for m in MODALITIES},
                records=dict(records),
            )
        if index in hooks:
            joint[Modality.RGB], joint[Modality.TIR] = hooks[index](
                index, joint[Modality.RGB], joint[Modality.TIR]
            )

    return BackboneOutput(joint[Modality.RGB], joint[Modality.TIR], staged, records)
