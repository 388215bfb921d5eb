"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"DDIR"
    u32  format version
    u32  config length, then the UTF-8 config text
    u32  tensor count
    per tensor:
        u32 name length, UTF-8 name
        u32 rank, rank x u64 extents
        float32 elements, row-major
    u32  CRC-32 of every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"DDIR"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(tensors: dict[str, np.ndarray], config_text: str = "") -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    cfg = config_text.encode("utf-8")
    parts += [struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw_name = name.encode("utf-8")
        arr = np.asarray(arr)
        parts += [struct.pack("<I", len(raw_name)), raw_name, struct.pack("<I", arr.ndim)]
        parts += [struct.pack("<Q", d) for d in arr.shape]
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_checkpoint(blob: bytes, source: str = "<checkpoint>") -> tuple[dict[str, np.ndarray], str]:
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise CheckpointError(f"{source}: not a DDIR checkpoint")
    if len(blob) < 12:
        raise CheckpointError(f"{source}: truncated checkpoint (CRC mismatch)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{source}: CRC mismatch")
    (version,) = struct.unpack_from("<I", body, 4)
    if version > VERSION:
        raise CheckpointError(f"{source}: format version {version} is newer than supported {VERSION}")
    pos = 8
    try:
        (n,) = struct.unpack_from("<I", body, pos)
        pos += 4
        config_text = body[pos:pos + n].decode("utf-8")
        pos += n
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", body, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", body, pos)
            pos += 8 * rank
            size = int(np.prod(shape, dtype=np.int64)) * 4
            if pos + size > len(body):
                raise CheckpointError(f"{source}: tensor {name!r} runs past the end")
            tensors[name] = np.frombuffer(body, dtype="<f4", count=size // 4, offset=pos).reshape(shape).astype(np.float32)
            pos += size
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{source}: malformed checkpoint ({exc})") from exc
    if pos != len(body):
        raise CheckpointError(f"{source}: trailing bytes after tensor table")
    return tensors, config_text


def save_checkpoint(path, tensors: dict[str, np.ndarray], config_text: str = "") -> Path:
    path = Path(path)
    if not path.parent.is_dir():
        raise CheckpointError(f"{path.parent}: directory does not exist")
    path.write_bytes(encode_checkpoint(tensors, config_text))
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], str]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from exc
    return decode_checkpoint(blob, str(path))
