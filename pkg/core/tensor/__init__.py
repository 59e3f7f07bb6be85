"""Minimal dense tensors with reverse-mode differentiation."""

from .tensor import Tensor, backward, concat, is_grad_enabled, lift, no_grad
from .params import (
    AttentionParams,
    LayerNormParams,
    LinearParams,
    MLPParams,
    iter_parameters,
    parameter_list,
    zero_grads,
)
from .functional import (
    binary_cross_entropy_with_logits,
    gelu,
    layer_norm,
    linear,
    mlp_block,
    multi_head_attention,
    scaled_dot_attention,
    scatter_rows,
    softmax_rows,
)
from .gradcheck import grad_check

__all__ = [
    "Tensor",
    "backward",
    "concat",
    "is_grad_enabled",
    "lift",
    "no_grad",
    "AttentionParams",
    "LayerNormParams",
    "LinearParams",
    "MLPParams",
    "iter_parameters",
    "parameter_list",
    "zero_grads",
    "binary_cross_entropy_with_logits",
    "gelu",
    "layer_norm",
    "linear",
    "mlp_block",
    "multi_head_attention",
    "scaled_dot_attention",
    "scatter_rows",
    "softmax_rows",
    "grad_check",
]
