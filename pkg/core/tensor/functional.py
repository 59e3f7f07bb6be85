"""The op set the tracking pipeline is built from.

Composite ops (linear, attention, MLP) reuse the differentiable primitives of
``Tensor``; softmax, layer norm and GELU are fused with hand-written gradients.
"""

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.tensor.params import AttentionParams, LinearParams, MLPParams
from core.tensor.tensor import DTYPE, Tensor, concat
from core.utils.errors import ConfigError, ContractError, DimensionError, SingularityError

LN_EPS = 1e-6
GELU_C = math.sqrt(2.0 / math.pi)
GELU_K = 0.044715


def linear(x: Tensor, p: LinearParams) -> Tensor:
    if x.ndim != 2 or x.shape[1] != p.in_features:
        raise DimensionError(f"linear expects [N, {p.in_features}], got {x.shape}")
    out = x @ p.weight
    if p.bias is not None:
        out = out + p.bias
    return out


def softmax_rows(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g: np.ndarray):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor.from_op(y, (x,), "softmax", grad_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    dim = x.shape[-1]
    if dim == 1 and eps == 0:
        raise SingularityError("layer_norm over a single feature with eps=0 divides by zero")
    if gamma.shape != (dim,) or beta.shape != (dim,):
        raise DimensionError(f"layer_norm affine params must be [{dim}]")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv
    g_data = gamma.data

    def grad_fn(g: np.ndarray):
        dxhat = g * g_data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        reduce_axes = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=reduce_axes), g.sum(axis=reduce_axes)

    return Tensor.from_op(xhat * g_data + beta.data, (x, gamma, beta), "layer_norm", grad_fn)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    a = x.data
    t = np.tanh(GELU_C * (a + GELU_K * a**3))

    def grad_fn(g: np.ndarray):
        dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * a * a)
        return (g * (0.5 * (1.0 + t) + 0.5 * a * dt),)

    return Tensor.from_op(0.5 * a * (1.0 + t), (x,), "gelu", grad_fn)


def mlp_block(x: Tensor, hidden_ratio: float, params: MLPParams) -> Tensor:
    hidden = round(hidden_ratio * x.shape[-1])
    if hidden < 1:
        raise ConfigError(f"mlp hidden size {hidden} must be at least 1")
    if params.fc1.out_features != hidden:
        raise DimensionError(
            f"mlp hidden size {params.fc1.out_features} != round({hidden_ratio}*{x.shape[-1]})"
        )
    return linear(gelu(linear(x, params.fc1)), params.fc2)


def scaled_dot_attention(
    q: Tensor, k: Tensor, v: Tensor, return_weights: bool = False
):
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise DimensionError("attention operands must be 2-D")
    if q.shape[1] != k.shape[1] or q.shape[1] < 1:
        raise DimensionError(f"query/key channels differ: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise DimensionError(f"key/value lengths differ: {k.shape} vs {v.shape}")
    weights = softmax_rows((q @ k.T) * (1.0 / math.sqrt(q.shape[1])))
    out = weights @ v
    if return_weights:
        return out, weights.data
    return out


def multi_head_attention(
    x_q: Tensor, x_kv: Tensor, params: AttentionParams, heads: int
) -> Tuple[Tensor, np.ndarray]:
    """Returns the projected output and the attention weights ``[heads, Nq, Nk]``."""
    dim = params.q.out_features
    if dim % heads:
        raise ConfigError(f"embed dim {dim} is not divisible by {heads} heads")
    q = linear(x_q, params.q)
    k = linear(x_kv, params.k)
    v = linear(x_kv, params.v)
    width = dim // heads
    outputs: List[Tensor] = []
    weights: List[np.ndarray] = []
    for head in range(heads):
        cols = (slice(None), slice(head * width, (head + 1) * width))
        out, w = scaled_dot_attention(q[cols], k[cols], v[cols], return_weights=True)
        outputs.append(out)
        weights.append(w)
    merged = outputs[0] if heads == 1 else concat(outputs, axis=1)
    return linear(merged, params.out), np.stack(weights)


def scatter_rows(x: Tensor, indices: Sequence[int], length: int) -> Tensor:
    """Place the rows of ``x`` at ``indices`` of a zero ``[length, D]`` tensor."""
    idx = np.asarray(indices, dtype=np.int64)
    if x.ndim != 2 or len(idx) != x.shape[0]:
        raise ContractError(f"{x.shape[0]} rows cannot fill {len(idx)} positions")
    if len(idx) and (idx.min() < 0 or idx.max() >= length):
        raise ContractError(f"scatter index out of range for length {length}")
    data = np.zeros((length, x.shape[1]), dtype=DTYPE)
    data[idx] = x.data
    return Tensor.from_op(data, (x,), "scatter_rows", lambda g: (g[idx],))


def binary_cross_entropy_with_logits(
    logits: Tensor, target: np.ndarray, weight: Optional[np.ndarray] = None
) -> Tensor:
    """Mean of ``softplus(z) - t*z``, the stable form of BCE(sigmoid(z), t)."""
    losses = logits.softplus() - logits * Tensor(target)
    if weight is not None:
        losses = losses * Tensor(weight)
    return losses.mean()
