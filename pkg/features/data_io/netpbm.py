"""Binary PPM (P6) and PGM (P5) with maxval 255."""

from pathlib import Path
from typing import Tuple, Union

import numpy as np

from core.utils.errors import DimensionError, MalformedHeaderError, ShortPayloadError, UnsupportedMaxvalError
from core.utils.files import atomic_write_bytes

CHANNELS = {b"P6": 3, b"P5": 1}
WHITESPACE = b" \t\r\n\v\f"


def _read_header(payload: bytes, path: str) -> Tuple[bytes, int, int, int, int]:
    """Returns magic, width, height, maxval and the payload offset."""
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(payload) and payload[pos] in WHITESPACE:
            pos += 1
        if pos < len(payload) and payload[pos:pos + 1] == b"#":
            while pos < len(payload) and payload[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(payload) and payload[pos] not in WHITESPACE and payload[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise MalformedHeaderError("truncated header", path, start)
        fields.append((payload[start:pos], start))
    if pos >= len(payload) or payload[pos] not in WHITESPACE:
        raise MalformedHeaderError("header must end with a single whitespace byte", path, pos)
    (magic, _), *numbers = fields
    if magic not in CHANNELS:
        raise MalformedHeaderError(f"unsupported magic {magic!r}", path, 0)
    values = []
    for token, offset in numbers:
        if not token.isdigit():
            raise MalformedHeaderError(f"expected a decimal number, got {token!r}", path, offset)
        values.append(int(token))
    width, height, maxval = values
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"bad dimensions {width}x{height}", path, numbers[0][1])
    if maxval != 255:
        raise UnsupportedMaxvalError(f"maxval {maxval} is not supported (only 255)", path, numbers[2][1])
    return magic, width, height, maxval, pos + 1


def decode_netpbm(payload: bytes, path: str = "<bytes>") -> np.ndarray:
    """``uint8 [H, W, C]`` with C = 3 for P6 and 1 for P5."""
    magic, width, height, _, offset = _read_header(payload, path)
    channels = CHANNELS[magic]
    needed = width * height * channels
    body = payload[offset:offset + needed]
    if len(body) < needed:
        raise ShortPayloadError(f"pixel payload has {len(body)} of {needed} bytes", path, offset + len(body))
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width, channels).copy()


def encode_netpbm(pixels: np.ndarray) -> bytes:
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    height, width, channels = pixels.shape
    if channels not in (1, 3):
        raise DimensionError(f"netpbm frames need 1 or 3 channels, got {channels}")
    magic = b"P6" if channels == 3 else b"P5"
    header = magic + f"\n{width} {height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()


def read_netpbm(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    return decode_netpbm(path.read_bytes(), str(path))


def write_netpbm(path: Union[str, Path], pixels: np.ndarray) -> Path:
    return atomic_write_bytes(path, encode_netpbm(pixels))


def to_unit(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float64) / 255.0


def from_unit(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
