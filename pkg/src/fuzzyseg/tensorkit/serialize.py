"""Binary tensor interchange format.

Layout, all little-endian:

    magic   4 bytes  b"FTNS"
    rank    u64
    dims    rank * u64
    dtype   u8       0 = float64, 1 = float32
    values  raw array data, C order

Used by checkpoints and the CLI probe subcommands; the format carries no
alignment or compression so third-party tooling can read it with a few
lines of struct unpacking.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

__all__ = ["tensor_to_bytes", "tensor_from_bytes", "write_tensor", "read_tensor"]

MAGIC = b"FTNS"
_TAG_BY_DTYPE = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}
_DTYPE_BY_TAG = {0: np.dtype("<f8"), 1: np.dtype("<f4")}


def tensor_to_bytes(array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    if arr.dtype not in _TAG_BY_DTYPE:
        raise ValueError(f"unsupported dtype {arr.dtype}; use float32 or float64")
    header = MAGIC + struct.pack("<Q", arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    header += struct.pack("<B", _TAG_BY_DTYPE[arr.dtype])
    return header + np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise ValueError("bad magic; not a tensor blob")
    (rank,) = struct.unpack_from("<Q", buf, 4)
    offset = 12
    dims = struct.unpack_from(f"<{rank}Q", buf, offset) if rank else ()
    offset += 8 * rank
    (tag,) = struct.unpack_from("<B", buf, offset)
    offset += 1
    if tag not in _DTYPE_BY_TAG:
        raise ValueError(f"unknown dtype tag {tag}")
    dtype = _DTYPE_BY_TAG[tag]
    count = int(np.prod(dims)) if rank else 1
    expected = offset + count * dtype.itemsize
    if len(buf) < expected:
        raise ValueError(f"truncated tensor blob: {len(buf)} bytes, need {expected}")
    values = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
    return values.reshape(dims).copy()


def blob_length(buf: bytes, offset: int = 0) -> int:
    """Byte length of the tensor blob starting at `offset` (for containers)."""
    if buf[offset:offset + 4] != MAGIC:
        raise ValueError("bad magic; not a tensor blob")
    (rank,) = struct.unpack_from("<Q", buf, offset + 4)
    dims = struct.unpack_from(f"<{rank}Q", buf, offset + 12) if rank else ()
    (tag,) = struct.unpack_from("<B", buf, offset + 12 + 8 * rank)
    count = int(np.prod(dims)) if rank else 1
    return 13 + 8 * rank + count * _DTYPE_BY_TAG[tag].itemsize


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(array))


def read_tensor(path: str | Path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())
