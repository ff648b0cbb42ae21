"""Checkpoint files exchanged between the train, eval and test programs.

Wire format (little-endian):
    magic "VACK", version u16 = 1, step u64, parameter count u32,
    per parameter: name length u16, name UTF-8, rank u8, extents u32 each,
                   float32 data,
    state count u32 followed by state tensors in the same encoding
    (optimizer moments plus the config fingerprint), CRC32 trailer.

Tensors are written in sorted name order and cast to float32, so a
load-then-save cycle is byte-identical.  Writers produce a temporary file in
the same directory and rename it into place; readers only ever open files
matching the final ``ckpt_########.vack`` pattern, so a half-written
checkpoint is never visible to them.
"""

from __future__ import annotations

import os
import re
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"VACK"
VERSION = 1

_HEADER = struct.Struct("<4sHQI")
_NAME_LEN = struct.Struct("<H")
_RANK = struct.Struct("<B")
_EXTENT = struct.Struct("<I")
_COUNT = struct.Struct("<I")
_CRC = struct.Struct("<I")

CKPT_PATTERN = re.compile(r"^ckpt_(\d{8})\.vack$")


class CheckpointError(ValueError):
    pass


def checkpoint_name(step):
    return f"ckpt_{step:08d}.vack"


def _encode_tensor(name, array):
    data = np.ascontiguousarray(array, dtype="<f4")
    name_bytes = name.encode("utf-8")
    parts = [_NAME_LEN.pack(len(name_bytes)), name_bytes,
             _RANK.pack(data.ndim)]
    parts.extend(_EXTENT.pack(e) for e in data.shape)
    parts.append(data.tobytes())
    return b"".join(parts)


def _decode_tensor(buf, offset):
    (name_len,) = _NAME_LEN.unpack_from(buf, offset)
    offset += _NAME_LEN.size
    name = buf[offset:offset + name_len].decode("utf-8")
    offset += name_len
    (rank,) = _RANK.unpack_from(buf, offset)
    offset += _RANK.size
    shape = []
    for _ in range(rank):
        (extent,) = _EXTENT.unpack_from(buf, offset)
        offset += _EXTENT.size
        shape.append(extent)
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
    offset += count * 4
    return name, data.reshape(shape).copy(), offset


def save(path, step, params, state=None):
    """Atomically write a checkpoint; on failure the partial file is removed."""
    path = Path(path)
    state = state or {}
    body = [_HEADER.pack(MAGIC, VERSION, step, len(params))]
    for name in sorted(params):
        body.append(_encode_tensor(name, params[name]))
    body.append(_COUNT.pack(len(state)))
    for name in sorted(state):
        body.append(_encode_tensor(name, state[name]))
    blob = b"".join(body)
    blob += _CRC.pack(zlib.crc32(blob))
    tmp = path.parent / f".{path.name}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    return path


def load(path):
    """Return (step, params, state); raises CheckpointError on corruption."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size + _CRC.size:
        raise CheckpointError(f"{path}: truncated")
    (crc,) = _CRC.unpack(blob[-_CRC.size:])
    if zlib.crc32(blob[:-_CRC.size]) != crc:
        raise CheckpointError(f"{path}: CRC mismatch")
    magic, version, step, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    offset = _HEADER.size
    params = {}
    for _ in range(count):
        name, array, offset = _decode_tensor(blob, offset)
        params[name] = array
    (state_count,) = _COUNT.unpack_from(blob, offset)
    offset += _COUNT.size
    state = {}
    for _ in range(state_count):
        name, array, offset = _decode_tensor(blob, offset)
        state[name] = array
    return step, params, state


def fingerprint_tensor(fingerprint: int):
    """CRC32 fingerprint split into two exact-in-float32 16-bit halves."""
    return np.array([fingerprint >> 16, fingerprint & 0xFFFF], dtype=np.float32)


def fingerprint_from_tensor(tensor) -> int:
    return (int(tensor[0]) << 16) | int(tensor[1])


def list_checkpoints(directory):
    """(step, path) pairs for complete checkpoints, ascending by step."""
    directory = Path(directory)
    found = []
    for entry in directory.iterdir():
        match = CKPT_PATTERN.match(entry.name)
        if match:
            found.append((int(match.group(1)), entry))
    return sorted(found)
