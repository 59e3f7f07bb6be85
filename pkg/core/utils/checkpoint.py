"""Flat binary tensor container used for checkpoints and cache dumps.

Layout (little-endian):
    b"STMT" | version u32 | count u32
    per entry: name_len u32 | name (UTF-8) | rank u32 | extents u64 * rank | f64 * prod(extents)
"""

import logging
import struct
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

from core.utils.errors import MalformedHeaderError, ShortPayloadError
from core.utils.files import atomic_write_bytes

logger = logging.getLogger(__name__)

MAGIC = b"STMT"
VERSION = 1


def encode_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, array in tensors.items():
        array = np.asarray(array, dtype="<f8")
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<I", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        chunks.append(np.ascontiguousarray(array).tobytes())
    return b"".join(chunks)


def decode_tensors(payload: bytes, path: Union[str, Path, None] = None) -> Dict[str, np.ndarray]:
    def take(offset: int, size: int) -> bytes:
        if offset + size > len(payload):
            raise ShortPayloadError(
                f"needed {size} bytes, {len(payload) - offset} left", path, offset
            )
        return payload[offset : offset + size]

    if take(0, 4) != MAGIC:
        raise MalformedHeaderError("bad magic, expected STMT", path, 0)
    version, count = struct.unpack("<II", take(4, 8))
    if version != VERSION:
        raise MalformedHeaderError(f"unsupported container version {version}", path, 4)
    offset = 12
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(offset, 4))
        offset += 4
        try:
            name = take(offset, name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedHeaderError(f"entry name is not UTF-8: {exc}", path, offset) from exc
        offset += name_len
        (rank,) = struct.unpack("<I", take(offset, 4))
        offset += 4
        shape = struct.unpack(f"<{rank}Q", take(offset, 8 * rank))
        offset += 8 * rank
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(take(offset, nbytes), dtype="<f8").astype(np.float64)
        offset += nbytes
        tensors[name] = data.reshape(shape)
    return tensors


def save_tensors(path: Union[str, Path], tensors: Mapping[str, np.ndarray]) -> Path:
    target = atomic_write_bytes(path, encode_tensors(tensors))
    logger.info("Wrote %d tensors to %s", len(tensors), target)
    return target


def load_tensors(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    return decode_tensors(Path(path).read_bytes(), path)
