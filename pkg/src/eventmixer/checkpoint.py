"""Versioned binary checkpoint container.

Byte layout (all integers little-endian):

    magic        4 bytes  b"EMXC"
    version      u32      currently 1
    digest_len   u32
    digest       utf-8 bytes (model config digest, hex)
    n_blobs      u32
    per blob:
        name_len u32
        name     utf-8 bytes
        ndim     u32
        shape    ndim x u64
        data     prod(shape) x f64, little-endian

Parameter order is preserved on load. Values are stored as float64
regardless of the in-memory compute dtype.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError, NumericError

MAGIC = b"EMXC"
VERSION = 1


def save_checkpoint(path, named_values: dict[str, np.ndarray], config_digest: str) -> None:
    digest_bytes = config_digest.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(digest_bytes)))
        fh.write(digest_bytes)
        fh.write(struct.pack("<I", len(named_values)))
        for name, value in named_values.items():
            arr = np.asarray(value, dtype="<f8")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path) -> tuple[str, dict[str, np.ndarray]]:
    """Read a checkpoint; returns (config digest, name -> float64 array)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(raw):
            raise DataError("truncated checkpoint file")
        chunk = raw[off : off + n]
        off += n
        return chunk

    if take(4) != MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    (digest_len,) = struct.unpack("<I", take(4))
    digest = take(digest_len).decode("utf-8")
    (n_blobs,) = struct.unpack("<I", take(4))
    values: dict[str, np.ndarray] = {}
    for _ in range(n_blobs):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim)) if ndim else ()
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).copy()
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"checkpoint blob {name!r} contains non-finite values")
        values[name] = arr
    if off != len(raw):
        raise DataError("trailing bytes after checkpoint payload")
    return digest, values
