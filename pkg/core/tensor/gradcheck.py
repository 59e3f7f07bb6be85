"""Central finite-difference gradient checking."""

import logging
from typing import Callable, List, Sequence, Tuple

import numpy as np

from core.tensor.tensor import Tensor, backward, no_grad

logger = logging.getLogger(__name__)


def relative_error(analytic: float, numeric: float, floor: float = 1e-3) -> float:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from dividing by noise."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_coords: int = 10_000,
    seed: int = 0,
    floor: float = 1e-3,
) -> float:
    """Compare tape gradients of ``f`` against central differences.

    Every coordinate is checked unless the parameters hold more than
    ``max_coords`` values, in which case a seeded random sample is used.
    Returns the maximum relative error.
    """
    for p in params:
        p.zero_grad()
    backward(f(), params)
    analytic = [p.grad.copy() for p in params]

    coords: List[Tuple[int, int]] = [
        (i, j) for i, p in enumerate(params) for j in range(p.size)
    ]
    if len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[k] for k in sorted(picked)]

    worst = 0.0
    with no_grad():
        for i, j in coords:
            flat = params[i].data.reshape(-1)
            original = flat[j]
            flat[j] = original + h
            plus = f().item()
            flat[j] = original - h
            minus = f().item()
            flat[j] = original
            numeric = (plus - minus) / (2.0 * h)
            worst = max(worst, relative_error(analytic[i].reshape(-1)[j], numeric, floor))
    for p in params:
        p.zero_grad()
    logger.debug("grad_check over %d coordinates: max rel err %.3e", len(coords), worst)
    return worst
