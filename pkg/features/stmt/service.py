"""Modality enhancement (CA) and dynamic-token temporal fusion (TF) between encoder layers."""

import logging
from typing import Dict, Mapping, Optional, Tuple

from core.models import CacheEntry, Role, TokenSeq
from core.tensor import layer_norm, mlp_block, multi_head_attention
from core.utils.config import TrackerConfig
from core.utils.errors import ContractError
from features.embedding.service import join_tokens, split_tokens
from features.encoder.service import Hook
from features.stmt.schemas import CrossAttentionParams, StmtConfig, StmtLayerParams

logger = logging.getLogger(__name__)


def _cross_attend(
    q_seq: TokenSeq, kv_seq: TokenSeq, params: CrossAttentionParams, cfg: TrackerConfig
) -> TokenSeq:
    if q_seq.dim != kv_seq.dim:
        raise ContractError(f"token widths differ: {q_seq.dim} vs {kv_seq.dim}")
    mixed, _ = multi_head_attention(q_seq.tokens, kv_seq.tokens, params.attn, cfg.num_heads)
    residual = q_seq.tokens + mixed
    refined = residual + mlp_block(
        layer_norm(residual, params.norm.gamma, params.norm.beta, cfg.ln_eps), cfg.mlp_ratio, params.mlp
    )
    return q_seq.with_tokens(refined)


def ca(q_seq: TokenSeq, kv_seq: TokenSeq, params: CrossAttentionParams, cfg: TrackerConfig) -> TokenSeq:
    """``q`` queries the other modality: ``q' = q + Attn(q, kv)``, ``out = q' + MLP(LN(q'))``."""
    return _cross_attend(q_seq, kv_seq, params, cfg)


def tf(x_seq: TokenSeq, m_seq: TokenSeq, params: CrossAttentionParams, cfg: TrackerConfig) -> TokenSeq:
    """Search tokens query the (modality-mixed) dynamic tokens of their own modality."""
    if x_seq.role is not Role.SEARCH or m_seq.role is not Role.DYNAMIC:
        raise ContractError(f"tf expects search + dynamic, got {x_seq.role.value} + {m_seq.role.value}")
    if x_seq.modality is not m_seq.modality:
        raise ContractError(
            f"tf modality mismatch: {x_seq.modality.value} search with {m_seq.modality.value} dynamic"
        )
    return _cross_attend(x_seq, m_seq, params, cfg)


def stmt_forward(
    h_v: TokenSeq,
    h_t: TokenSeq,
    entry: Optional[CacheEntry],
    layer: int,
    cfg: TrackerConfig,
    params: StmtLayerParams,
    stmt_cfg: Optional[StmtConfig] = None,
) -> Tuple[TokenSeq, TokenSeq]:
    stmt_cfg = stmt_cfg or StmtConfig.from_tracker(cfg)
    enhance = stmt_cfg.enable_modality_enhancement
    fuse = stmt_cfg.fuses_at(layer)
    if not enhance and not fuse:
        return h_v, h_t
    if fuse and entry is None:
        raise ContractError(f"temporal fusion at layer {layer} needs a seeded dynamic-token cache")

    n_z = h_v.n_z
    z_v, x_v = split_tokens(h_v, n_z)
    z_t, x_t = split_tokens(h_t, n_z)

    if enhance:
        z_v, z_t = ca(z_v, z_t, params.ca_template, cfg), ca(z_t, z_v, params.ca_template, cfg)

    if fuse:
        m_v, m_t = entry
        if enhance:
            m_v, m_t = ca(m_v, m_t, params.ca_dynamic, cfg), ca(m_t, m_v, params.ca_dynamic, cfg)
        x_v = tf(x_v, m_v, params.tf, cfg)
        x_t = tf(x_t, m_t, params.tf, cfg)

    return join_tokens(z_v, x_v, h_v.layout), join_tokens(z_t, x_t, h_t.layout)


def make_stmt_hooks(
    params: Mapping[int, StmtLayerParams],
    cfg: TrackerConfig,
    entries: Optional[Mapping[int, CacheEntry]] = None,
    dynamic: bool = True,
) -> Dict[int, Hook]:
    """One encoder hook per insertion layer; ``dynamic=False`` runs enhancement only."""
    stmt_cfg = StmtConfig.from_tracker(cfg)
    if not dynamic:
        stmt_cfg = stmt_cfg.model_copy(update={"enable_dynamic_tokens": False})
    entries = entries or {}

    def hook(layer: int, h_v: TokenSeq, h_t: TokenSeq) -> Tuple[TokenSeq, TokenSeq]:
        return stmt_forward(h_v, h_t, entries.get(layer), layer, cfg, params[layer], stmt_cfg)

    return {layer: hook for layer in stmt_cfg.insert_layers}
