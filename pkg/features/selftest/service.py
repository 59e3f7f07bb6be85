"""Self-checks runnable from the CLI.

Groups: central-difference gradients of every differentiable op and of the
full STMT pass, STMT identity configurations, dynamic-token memory exactness
and the evaluation metric oracles.
"""

import logging
import math
import time
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.models import Box, Grid, Modality, Role, TokenSeq
from core.tensor import (
    AttentionParams,
    LinearParams,
    MLPParams,
    Tensor,
    binary_cross_entropy_with_logits,
    concat,
    gelu,
    grad_check,
    layer_norm,
    linear,
    mlp_block,
    multi_head_attention,
    parameter_list,
    scaled_dot_attention,
    scatter_rows,
    softmax_rows,
)
from core.utils.config import TrackerConfig
from features.embedding.service import join_tokens
from features.encoder.schemas import EliminationRecord
from features.evaluation.service import iou, ope_curves
from features.memory.service import grid_to_tokens, restore_tokens, roi_align, tokens_to_grid
from features.selftest.schemas import CheckResult
from features.stmt.schemas import StmtLayerParams
from features.stmt.service import stmt_forward

logger = logging.getLogger(__name__)

GRAD_TOLERANCE = 1e-4
ROI_TOLERANCE = 1e-6

# name -> builder(rng, shape) -> (loss closure, parameters)
GradCase = Callable[[np.random.Generator, Tuple[int, ...]], Tuple[Callable[[], Tensor], List[Tensor]]]


def _param(rng: np.random.Generator, *shape: int, low: Optional[float] = None) -> Tensor:
    data = rng.normal(size=shape)
    if low is not None:
        data = np.sign(data) * (low + np.abs(data))
    return Tensor(data, requires_grad=True)


def _readout(rng: np.random.Generator, *tensors_shape: Tuple[int, ...]):
    weights = [Tensor(rng.normal(size=shape)) for shape in tensors_shape]

    def reduce(*outputs: Tensor) -> Tensor:
        total = None
        for out, w in zip(outputs, weights):
            term = (out * w).sum()
            total = term if total is None else total + term
        return total

    return reduce


def _unary(op: Callable[[Tensor], Tensor], positive: bool = False, away_from_zero: bool = False) -> GradCase:
    def build(rng, shape):
        x = _param(rng, *shape, low=0.2 if away_from_zero else None)
        if positive:
            x.data[...] = np.abs(x.data) + 0.5
        readout = _readout(rng, tuple(op(x).shape))
        return lambda: readout(op(x)), [x]

    return build


def _binary(op: Callable[[Tensor, Tensor], Tensor], b_away_from_zero: bool = False) -> GradCase:
    def build(rng, shape):
        a = _param(rng, *shape)
        b = _param(rng, *shape, low=0.5 if b_away_from_zero else None)
        readout = _readout(rng, shape)
        return lambda: readout(op(a, b)), [a, b]

    return build


def _matmul(rng, shape):
    n, k, m = shape
    a, b = _param(rng, n, k), _param(rng, k, m)
    readout = _readout(rng, (n, m))
    return lambda: readout(a @ b), [a, b]


def _linear(rng, shape):
    n, d_in, d_out = shape
    x = _param(rng, n, d_in)
    p = LinearParams(_param(rng, d_in, d_out), _param(rng, d_out))
    readout = _readout(rng, (n, d_out))
    return lambda: readout(linear(x, p)), [x, p.weight, p.bias]


def _layer_norm(rng, shape):
    x = _param(rng, *shape)
    gamma, beta = _param(rng, shape[-1]), _param(rng, shape[-1])
    readout = _readout(rng, shape)
    return lambda: readout(layer_norm(x, gamma, beta)), [x, gamma, beta]


def _mlp(rng, shape):
    n, d = shape
    x = _param(rng, n, d)
    p = MLPParams.create(d, 2 * d, rng)
    readout = _readout(rng, (n, d))
    return lambda: readout(mlp_block(x, 2.0, p)), [x] + parameter_list(p)


def _attention(rng, shape):
    nq, nk, d = shape
    q, k, v = _param(rng, nq, d), _param(rng, nk, d), _param(rng, nk, d)
    readout = _readout(rng, (nq, d))
    return lambda: readout(scaled_dot_attention(q, k, v)), [q, k, v]


def _mha(rng, shape):
    nq, nk, d = shape
    xq, xkv = _param(rng, nq, d), _param(rng, nk, d)
    p = AttentionParams.create(d, rng)
    for tensor in parameter_list(p):
        tensor.data[...] = rng.normal(scale=0.5, size=tensor.shape)
    readout = _readout(rng, (nq, d))
    return lambda: readout(multi_head_attention(xq, xkv, p, 2)[0]), [xq, xkv] + parameter_list(p)


def _scatter(rng, shape):
    n, d = shape
    length = n + 3
    idx = np.sort(rng.choice(length, size=n, replace=False))
    x = _param(rng, n, d)
    readout = _readout(rng, (length, d))
    return lambda: readout(scatter_rows(x, idx, length)), [x]


def _concat(rng, shape):
    a, b = _param(rng, *shape), _param(rng, *shape)
    readout = _readout(rng, (2 * shape[0],) + tuple(shape[1:]))
    return lambda: readout(concat([a, b], axis=0)), [a, b]


def _bce(rng, shape):
    z = _param(rng, *shape)
    target = rng.uniform(size=shape)
    return lambda: binary_cross_entropy_with_logits(z, target), [z]


def _getitem(rng, shape):
    x = _param(rng, *shape)
    readout = _readout(rng, tuple(x.data[1:, ::2].shape))
    return lambda: readout(x[1:, ::2]), [x]


def _sum_axis(rng, shape):
    x = _param(rng, *shape)
    readout = _readout(rng, (shape[0], 1))
    return lambda: readout(x.sum(axis=1, keepdims=True) + x.mean(axis=1, keepdims=True)), [x]


def _reshape_t(rng, shape):
    x = _param(rng, *shape)
    readout = _readout(rng, (shape[1], shape[0]))
    return lambda: readout(x.reshape(shape[1], shape[0]) + x.T), [x]


SHAPES_2D = [(2, 3), (4, 5), (3, 7)]
SHAPES_3 = [(2, 3, 4), (5, 2, 3), (3, 4, 4)]

GRAD_CASES: Dict[str, Tuple[GradCase, Sequence[Tuple[int, ...]]]] = {
    "add": (_binary(lambda a, b: a + b), SHAPES_2D),
    "sub": (_binary(lambda a, b: a - b), SHAPES_2D),
    "mul": (_binary(lambda a, b: a * b), SHAPES_2D),
    "div": (_binary(lambda a, b: a / b, b_away_from_zero=True), SHAPES_2D),
    "pow": (_unary(lambda x: x**3 + x**0.5, positive=True), SHAPES_2D),
    "exp": (_unary(lambda x: x.exp()), SHAPES_2D),
    "log": (_unary(lambda x: x.log(), positive=True), SHAPES_2D),
    "tanh": (_unary(lambda x: x.tanh()), SHAPES_2D),
    "sigmoid": (_unary(lambda x: x.sigmoid()), SHAPES_2D),
    "softplus": (_unary(lambda x: x.softplus()), SHAPES_2D),
    "abs": (_unary(lambda x: x.abs(), away_from_zero=True), SHAPES_2D),
    "gelu": (_unary(gelu), SHAPES_2D),
    "softmax": (_unary(softmax_rows), SHAPES_2D),
    "reshape_transpose": (_reshape_t, SHAPES_2D),
    "index": (_getitem, [(3, 4), (4, 5), (5, 3)]),
    "sum_mean": (_sum_axis, SHAPES_2D),
    "matmul": (_matmul, SHAPES_3),
    "linear": (_linear, SHAPES_3),
    "layer_norm": (_layer_norm, [(2, 4), (3, 6), (4, 5)]),
    "mlp_block": (_mlp, [(2, 4), (3, 6), (4, 3)]),
    "attention": (_attention, SHAPES_3),
    "multi_head_attention": (_mha, [(2, 3, 4), (3, 5, 6), (4, 2, 8)]),
    "scatter_rows": (_scatter, SHAPES_2D),
    "concat": (_concat, SHAPES_2D),
    "bce_with_logits": (_bce, [(4,), (3, 5), (7,)]),
}

STMT_DIMS = (4, 8, 12)


def tiny_config(embed_dim: int = 8, **overrides) -> TrackerConfig:
    values = dict(
        template_size=32, search_size=64, patch_size=16, embed_dim=embed_dim, depth=3,
        num_heads=2, mlp_ratio=2.0, head_hidden=8, insert_layers=(1, 2), tf_layers=(2,),
    )
    values.update(overrides)
    return TrackerConfig(**values)


def stmt_inputs(cfg: TrackerConfig, rng: np.random.Generator, requires_grad: bool = False):
    tg, sg = Grid(cfg.template_grid, cfg.template_grid), Grid(cfg.search_grid, cfg.search_grid)

    def seq(role: Role, modality: Modality, grid: Grid) -> TokenSeq:
        tokens = Tensor(rng.normal(size=(grid.size, cfg.embed_dim)), requires_grad=requires_grad)
        return TokenSeq(tokens, role, modality, grid=grid)

    h_v = join_tokens(seq(Role.TEMPLATE, Modality.RGB, tg), seq(Role.SEARCH, Modality.RGB, sg))
    h_t = join_tokens(seq(Role.TEMPLATE, Modality.TIR, tg), seq(Role.SEARCH, Modality.TIR, sg))
    entry = (seq(Role.DYNAMIC, Modality.RGB, tg), seq(Role.DYNAMIC, Modality.TIR, tg))
    return h_v, h_t, entry


def _stmt_case(embed_dim: int, rng: np.random.Generator):
    cfg = tiny_config(embed_dim)
    params = StmtLayerParams.create(cfg, rng)
    for tensor in parameter_list(params):
        tensor.data[...] = rng.normal(scale=0.3, size=tensor.shape)
    h_v, h_t, entry = stmt_inputs(cfg, rng, requires_grad=True)
    readout = _readout(rng, h_v.tokens.shape, h_t.tokens.shape)

    def loss() -> Tensor:
        out_v, out_t = stmt_forward(h_v, h_t, entry, 2, cfg, params)
        return readout(out_v.tokens, out_t.tokens)

    inputs = [h_v.tokens, h_t.tokens, entry[0].tokens, entry[1].tokens]
    return loss, inputs + parameter_list(params)


def check_gradients(seed: int = 0) -> List[CheckResult]:
    results = []
    for name, (build, shapes) in GRAD_CASES.items():
        rng = np.random.default_rng(seed)
        worst = max(grad_check(*build(rng, shape)) for shape in shapes)
        results.append(
            CheckResult(group="grad", name=name, passed=worst <= GRAD_TOLERANCE, detail=f"max rel err {worst:.2e}")
        )
    rng = np.random.default_rng(seed)
    worst = max(grad_check(*_stmt_case(dim, rng), max_coords=400, seed=seed) for dim in STMT_DIMS)
    results.append(
        CheckResult(group="grad", name="stmt_forward", passed=worst <= GRAD_TOLERANCE, detail=f"max rel err {worst:.2e}")
    )
    return results


def zero_residual_branches(params: StmtLayerParams) -> None:
    """Zero value/output projections and the second MLP layer of every CA/TF block."""
    for block in (params.ca_template, params.ca_dynamic, params.tf):
        for linear_params in (block.attn.v, block.attn.out, block.mlp.fc2):
            linear_params.weight.data[...] = 0.0
            if linear_params.bias is not None:
                linear_params.bias.data[...] = 0.0


def _bitwise_equal(a: TokenSeq, b: TokenSeq) -> bool:
    return a.tokens.data.tobytes() == b.tokens.data.tobytes()


def check_identities(seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    cfg = tiny_config()
    h_v, h_t, entry = stmt_inputs(cfg, rng)

    params = StmtLayerParams.create(cfg, rng)
    zero_residual_branches(params)
    out_v, out_t = stmt_forward(h_v, h_t, entry, 2, cfg, params)
    zeroed = _bitwise_equal(out_v, h_v) and _bitwise_equal(out_t, h_t)

    disabled = cfg.model_copy(update={"enable_modality_enhancement": False, "enable_dynamic_tokens": False})
    live = StmtLayerParams.create(cfg, rng)
    off_v, off_t = stmt_forward(h_v, h_t, None, 2, disabled, live)
    flags_off = _bitwise_equal(off_v, h_v) and _bitwise_equal(off_t, h_t)
    return [
        CheckResult(group="identity", name="zeroed_branches", passed=zeroed),
        CheckResult(group="identity", name="flags_off", passed=flags_off),
    ]


def bilinear_reference(fm: np.ndarray, y: float, x: float) -> np.ndarray:
    """Clamped bilinear read at continuous ``(y, x)`` with cell centers at ``k + 0.5``."""
    rows, cols, _ = fm.shape
    yi = min(max(y - 0.5, 0.0), rows - 1)
    xi = min(max(x - 0.5, 0.0), cols - 1)
    y0, x0 = int(math.floor(yi)), int(math.floor(xi))
    y1, x1 = min(y0 + 1, rows - 1), min(x0 + 1, cols - 1)
    wy, wx = yi - y0, xi - x0
    return (
        fm[y0, x0] * (1 - wy) * (1 - wx)
        + fm[y0, x1] * (1 - wy) * wx
        + fm[y1, x0] * wy * (1 - wx)
        + fm[y1, x1] * wy * wx
    )


def roi_align_reference(fm: np.ndarray, roi: Box, out: Tuple[int, int], sampling: int) -> np.ndarray:
    out_rows, out_cols = out
    result = np.zeros((out_rows, out_cols, fm.shape[2]))
    for i in range(out_rows):
        for j in range(out_cols):
            acc = np.zeros(fm.shape[2])
            for a in range(sampling):
                for b in range(sampling):
                    y = roi.y + (i + (a + 0.5) / sampling) * roi.h / out_rows
                    x = roi.x + (j + (b + 0.5) / sampling) * roi.w / out_cols
                    acc += bilinear_reference(fm, y, x)
            result[i, j] = acc / sampling**2
    return result


def check_memory(seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    grid = Grid(4, 4)
    seq = TokenSeq(Tensor(rng.normal(size=(grid.size, 3))), Role.SEARCH, Modality.RGB, grid=grid)

    round_trip = grid_to_tokens(tokens_to_grid(seq), Role.SEARCH, Modality.RGB)
    reshape_ok = round_trip.tokens.data.tobytes() == seq.tokens.data.tobytes()

    kept = tuple(sorted(rng.choice(grid.size, size=9, replace=False).tolist()))
    record = EliminationRecord(layer_index=1, kept_indices=kept, original_len=grid.size)
    short = TokenSeq(seq.tokens[np.array(kept)], Role.SEARCH, Modality.RGB)
    restored = restore_tokens(short, record, grid).tokens.data
    mask = np.zeros(grid.size, dtype=bool)
    mask[list(kept)] = True
    restore_ok = (
        restored[mask].tobytes() == seq.tokens.data[mask].tobytes() and not restored[~mask].any()
    )

    constant = np.full((5, 6, 2), 0.37)
    roi = Box(x=-1.3, y=0.7, w=4.9, h=3.1)
    constant_ok = bool((roi_align(constant, roi, (3, 3), 2) == 0.37).all())

    fm = rng.normal(size=(5, 6, 3))
    full = roi_align(fm, Box(x=0, y=0, w=6, h=5), (5, 6), 1)
    identity_err = float(np.abs(full - fm).max())
    random_err = float(np.abs(roi_align(fm, roi, (3, 4), 2) - roi_align_reference(fm, roi, (3, 4), 2)).max())
    tiny = roi_align(np.array([[[0.0], [1.0]], [[2.0], [3.0]]]), Box(x=0, y=0, w=2, h=2), (1, 1), 1)

    return [
        CheckResult(group="memory", name="reshape_round_trip", passed=reshape_ok),
        CheckResult(group="memory", name="restore_zero_fill", passed=restore_ok),
        CheckResult(group="memory", name="roi_constant", passed=constant_ok),
        CheckResult(group="memory", name="roi_full_extent", passed=identity_err <= ROI_TOLERANCE, detail=f"{identity_err:.1e}"),
        CheckResult(group="memory", name="roi_reference", passed=random_err <= ROI_TOLERANCE, detail=f"{random_err:.1e}"),
        CheckResult(group="memory", name="roi_2x2_center", passed=abs(float(tiny.reshape(-1)[0]) - 1.5) <= 1e-12),
    ]


def pixel_iou(a: Box, b: Box, resolution: int = 8) -> float:
    """Count sub-pixel samples on a lattice; exact for integer boxes."""
    x0 = math.floor(min(a.x, b.x))
    y0 = math.floor(min(a.y, b.y))
    x1 = math.ceil(max(a.x + a.w, b.x + b.w))
    y1 = math.ceil(max(a.y + a.h, b.y + b.h))
    xs = x0 + (np.arange((x1 - x0) * resolution) + 0.5) / resolution
    ys = y0 + (np.arange((y1 - y0) * resolution) + 0.5) / resolution

    def inside(box: Box) -> np.ndarray:
        return ((ys >= box.y) & (ys < box.y + box.h))[:, None] & ((xs >= box.x) & (xs < box.x + box.w))[None, :]

    ia, ib = inside(a), inside(b)
    union = (ia | ib).sum()
    return float((ia & ib).sum() / union) if union else 0.0


def check_metrics(seed: int = 0) -> List[CheckResult]:
    a, b = Box(x=0, y=0, w=2, h=2), Box(x=1, y=1, w=2, h=2)
    value = iou(a, b)
    oracle = pixel_iou(a, b)
    pr = ope_curves([5.0, 25.0], [0.0, 0.0], [1.0, 1.0]).pr20
    perfect = ope_curves([0.0] * 5, [0.0] * 5, [1.0] * 5)
    return [
        CheckResult(
            group="metrics", name="iou_one_seventh",
            passed=abs(value - 1.0 / 7.0) <= 1e-12 and abs(value - oracle) <= 1e-12, detail=f"{value:.12f}",
        ),
        CheckResult(group="metrics", name="pr20_half", passed=pr == 0.5),
        CheckResult(
            group="metrics", name="perfect_trace", passed=perfect.pr20 == perfect.npr == perfect.sr == 1.0
        ),
    ]


SUITE = (check_gradients, check_identities, check_memory, check_metrics)


def run_selftest(seed: int = 0) -> List[CheckResult]:
    started = time.perf_counter()
    results: List[CheckResult] = []
    for check in SUITE:
        try:
            results.extend(check(seed))
        except Exception as exc:
            logger.error("%s raised", check.__name__, exc_info=True)
            results.append(CheckResult(group=check.__name__, name="raised", passed=False, detail=str(exc)))
    logger.info(
        "selftest: %d/%d checks passed in %.1fs",
        sum(r.passed for r in results), len(results), time.perf_counter() - started,
    )
    return results
