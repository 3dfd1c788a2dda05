"""Binary checkpoint container for named tensors.

Layout (all integers little-endian):
  magic "CVQG" | version u32 | tensor count u32 |
  per tensor: name length u32, UTF-8 name, rank u32, dims u32 each,
              float32 payload |
  trailing CRC32 (u32) over the concatenated payload bytes.

Tensors are written sorted by name; save -> load round trips float32 data
bit-exactly and a corrupt payload fails the CRC on load.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

MAGIC = b"CVQG"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict) -> None:
    """Write name -> array (cast to float32) in sorted-name order."""
    crc = 0
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name in sorted(tensors):
            arr = tensors[name]
            data = getattr(arr, "data", arr)  # Tensor or ndarray
            payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            shape = np.asarray(data).shape
            fh.write(struct.pack("<I", len(shape)))
            for dim in shape:
                fh.write(struct.pack("<I", dim))
            fh.write(payload)
            crc = zlib.crc32(payload, crc)
        fh.write(struct.pack("<I", crc))


def _read(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path) -> dict:
    """Read name -> float32 ndarray; verifies magic, version and CRC."""
    out = {}
    crc = 0
    with open(path, "rb") as fh:
        if _read(fh, 4, "magic") != MAGIC:
            raise CheckpointError("bad magic: not a CVQG checkpoint")
        version, count = struct.unpack("<II", _read(fh, 8, "header"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read(fh, 4, "name length"))
            name = _read(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read(fh, 4, "rank"))
            shape = struct.unpack(f"<{rank}I", _read(fh, 4 * rank, "dims"))
            n_items = 1
            for dim in shape:
                n_items *= dim
            payload = _read(fh, 4 * n_items, f"payload of {name}")
            crc = zlib.crc32(payload, crc)
            out[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        (want_crc,) = struct.unpack("<I", _read(fh, 4, "crc"))
        if crc != want_crc:
            raise CheckpointError("payload CRC mismatch: checkpoint is corrupt")
        if fh.read(1):
            raise CheckpointError("trailing bytes after checkpoint CRC")
    return out
