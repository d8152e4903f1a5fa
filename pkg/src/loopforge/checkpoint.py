"""LCKP checkpoint container.

Layout: magic "LCKP", u32-LE entry count; per entry u16-LE name length,
UTF-8 name, u8 dtype (0 = fp32), u8 rank, rank x u32-LE extents, then the
raw little-endian payload. Arrays are stored fp32 and loaded back as fp64.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .util import atomic_write_bytes

MAGIC = b"LCKP"
DTYPE_FP32 = 0


class CheckpointError(ValueError):
    pass


def dumps(entries: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(entries)))
    for name, arr in entries.items():
        raw = np.asarray(arr, dtype="<f4")  # tobytes() copies to C order itself
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<BB", DTYPE_FP32, raw.ndim))
        buf.write(struct.pack(f"<{raw.ndim}I", *raw.shape))
        buf.write(raw.tobytes())
    return buf.getvalue()


def loads(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {data[:4]!r}")
    off = 4
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        dtype, rank = struct.unpack_from("<BB", data, off)
        off += 2
        if dtype != DTYPE_FP32:
            raise CheckpointError(f"entry {name}: unknown dtype {dtype}")
        shape = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        end = off + 4 * n
        if end > len(data):
            raise CheckpointError(f"entry {name}: truncated payload")
        arr = np.frombuffer(data[off:end], dtype="<f4").reshape(shape)
        entries[name] = arr.astype(np.float64)
        off = end
    return entries


def save(path, entries: dict[str, np.ndarray]) -> None:
    atomic_write_bytes(path, dumps(entries))


def load(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return loads(f.read())
