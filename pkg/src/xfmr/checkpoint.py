"""Binary named-tensor container.

Layout (all integers little-endian):
    magic          4 bytes  "XFMR"
    version        u32
    entry count    u32
    per entry:     name_len u32, name utf-8, dtype u8 (0=f32, 1=f64),
                   rank u8, extents u64 * rank, row-major payload
    trailer        u32 CRC32 of every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint", "MAGIC", "FORMAT_VERSION"]

MAGIC = b"XFMR"
FORMAT_VERSION = 1

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path: str | Path, entries: dict[str, np.ndarray]) -> None:
    names = list(entries)
    if len(set(names)) != len(names):
        raise CheckpointError("duplicate tensor names")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", FORMAT_VERSION, len(names))
    for name in names:
        arr = np.asarray(entries[name])
        if arr.dtype not in _DTYPE_CODES:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        blob += struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim)
        blob += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
        blob += np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise CheckpointError("file too short to be a checkpoint")
    if raw[:4] != MAGIC:
        raise CheckpointError(f"bad magic {raw[:4]!r}")
    (stored_crc,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError("CRC mismatch: checkpoint is corrupted")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version}")
    offset = 12
    out: dict[str, np.ndarray] = {}
    body = raw[:-4]
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", body, offset)
        offset += 4
        name = body[offset : offset + name_len].decode("utf-8")
        offset += name_len
        code, rank = struct.unpack_from("<BB", body, offset)
        offset += 2
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"{name}: unknown dtype code {code}")
        shape = struct.unpack_from(f"<{rank}Q", body, offset) if rank else ()
        offset += 8 * rank
        dtype = _CODE_DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        payload = body[offset : offset + nbytes]
        if len(payload) != nbytes:
            raise CheckpointError(f"{name}: truncated payload")
        offset += nbytes
        if name in out:
            raise CheckpointError(f"duplicate tensor name {name!r}")
        out[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    if offset != len(body):
        raise CheckpointError("trailing bytes after last entry")
    return out
