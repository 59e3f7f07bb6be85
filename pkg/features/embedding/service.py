"""Turn template/search crops into position-encoded token sequences."""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from core.models import Grid, ModalImage, Modality, Role, TokenSeq
from core.tensor import Tensor, concat, linear
from core.utils.errors import ConfigError, ContractError
from features.embedding.schemas import EmbedParams

logger = logging.getLogger(__name__)


def normalize_pixels(
    pixels: np.ndarray, mean: Sequence[float], std: Sequence[float]
) -> np.ndarray:
    """Per-channel ``(v - mean) / std`` on [0, 1] pixels; single-channel TIR uses channel 0."""
    channels = pixels.shape[-1]
    mean_arr = np.asarray(mean[:channels], dtype=np.float64)
    std_arr = np.asarray(std[:channels], dtype=np.float64)
    return (pixels - mean_arr) / std_arr


def patchify(img: ModalImage, patch: int) -> Tensor:
    """Row-major patches, each flattened as ``P x P x 3``; TIR is replicated to 3 channels."""
    height, width, _ = img.pixels.shape
    if patch < 1 or height % patch or width % patch:
        raise ConfigError(f"image {height}x{width} is not divisible into {patch}px patches")
    pixels = img.pixels
    if pixels.shape[2] == 1:
        pixels = np.repeat(pixels, 3, axis=2)
    rows, cols = height // patch, width // patch
    patches = (
        pixels.reshape(rows, patch, cols, patch, 3)
        .transpose(0, 2, 1, 3, 4)
        .reshape(rows * cols, patch * patch * 3)
    )
    return Tensor(patches)


def embed(img: ModalImage, role: Role, params: EmbedParams, patch: int) -> TokenSeq:
    if role is Role.TEMPLATE:
        pos = params.pos_template
    elif role is Role.SEARCH:
        pos = params.pos_search
    else:
        raise ContractError(f"cannot embed an image as {role.value} tokens")
    rows, cols = img.height // patch, img.width // patch
    if rows * cols != pos.shape[0] or img.height % patch or img.width % patch:
        raise ConfigError(
            f"{role.value} image {img.height}x{img.width} does not match "
            f"{pos.shape[0]} position embeddings at patch {patch}"
        )
    tokens = linear(patchify(img, patch), params.patch_proj) + pos
    return TokenSeq(tokens, role, img.modality, grid=Grid(rows, cols))


def join_tokens(z: TokenSeq, x: TokenSeq, layout: Optional[Tuple[Grid, Grid]] = None) -> TokenSeq:
    """Template first. ``layout`` overrides the recorded grids (search shortened by elimination)."""
    if z.modality is not x.modality:
        raise ContractError(f"cannot join {z.modality.value} template with {x.modality.value} search")
    if z.role is not Role.TEMPLATE or x.role is not Role.SEARCH:
        raise ContractError(f"join expects template + search, got {z.role.value} + {x.role.value}")
    if z.dim != x.dim:
        raise ContractError(f"token widths differ: {z.dim} vs {x.dim}")
    search_grid = x.grid if x.grid is not None else Grid(0, 0)
    if len(x) == 0:
        return z
    return TokenSeq(
        concat([z.tokens, x.tokens], axis=0),
        Role.JOINT,
        z.modality,
        layout=layout or (z.grid, search_grid),
        n_z=len(z),
    )


def split_tokens(h: TokenSeq, n_z: int) -> Tuple[TokenSeq, TokenSeq]:
    if not 0 < n_z < len(h):
        raise ContractError(f"split point {n_z} outside (0, {len(h)})")
    z_grid, x_grid = h.layout if h.layout is not None else (None, None)
    if z_grid is not None and z_grid.size != n_z:
        z_grid = None
    n_x = len(h) - n_z
    if x_grid is not None and x_grid.size != n_x:
        # shortened by candidate elimination
        x_grid = None
    z = TokenSeq(h.tokens[:n_z], Role.TEMPLATE, h.modality, grid=z_grid)
    x = TokenSeq(h.tokens[n_z:], Role.SEARCH, h.modality, grid=x_grid)
    return z, x


def embed_pair(
    z_img: ModalImage, x_img: ModalImage, params: EmbedParams, patch: int
) -> Tuple[TokenSeq, TokenSeq]:
    return embed(z_img, Role.TEMPLATE, params, patch), embed(x_img, Role.SEARCH, params, patch)


def as_modal_image(pixels: np.ndarray, modality: Modality) -> ModalImage:
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    return ModalImage(np.asarray(pixels, dtype=np.float64), modality)
