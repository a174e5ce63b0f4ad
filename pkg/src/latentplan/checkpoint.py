"""Bit-exact checkpoint files.

Layout (little-endian)::

    b"EPLSCKPT" | u32 version | u32 count
    count x ( u16 name_len | name utf-8 | u8 rank | rank x u32 dim | f32 data )
    u32 crc32 of everything above
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"EPLSCKPT"
VERSION = 1


class CorruptFileError(ValueError):
    """File failed magic, version, length or CRC validation."""


def with_crc(payload: bytes) -> bytes:
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def strip_crc(blob: bytes, what: str = "file") -> bytes:
    if len(blob) < 4:
        raise CorruptFileError(f"{what}: too short")
    payload, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CorruptFileError(f"{what}: CRC mismatch")
    return payload


def encode_checkpoint(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return with_crc(b"".join(parts))


def decode_checkpoint(blob: bytes, what: str = "checkpoint") -> dict[str, np.ndarray]:
    payload = strip_crc(blob, what)
    if payload[:8] != MAGIC:
        raise CorruptFileError(f"{what}: bad magic")
    try:
        version, count = struct.unpack_from("<II", payload, 8)
        if version != VERSION:
            raise CorruptFileError(f"{what}: unsupported version {version}")
        pos = 16
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", payload, pos)
            pos += 2
            name = payload[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", payload, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", payload, pos)
            pos += 4 * rank
            size = int(np.prod(shape)) if rank else 1
            if pos + 4 * size > len(payload):
                raise CorruptFileError(f"{what}: truncated tensor {name!r}")
            data = np.frombuffer(payload, dtype="<f4", count=size, offset=pos)
            out[name] = data.astype(np.float32).reshape(shape)
            pos += 4 * size
    except (struct.error, UnicodeDecodeError) as exc:
        raise CorruptFileError(f"{what}: malformed ({exc})") from None
    if pos != len(payload):
        raise CorruptFileError(f"{what}: trailing bytes")
    return out


def save_checkpoint(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_checkpoint(tensors))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    return decode_checkpoint(path.read_bytes(), what=str(path))
