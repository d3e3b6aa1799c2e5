"""Flat binary checkpoints.

Layout (little-endian): magic ``RQNN``, u32 version, u32 entry count, then per
entry u32 name length, UTF-8 name, u32 ndim, ndim x u32 dims and the raw
float64 values in C order. Entries are parameters followed by buffers.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError

MAGIC = b"RQNN"
VERSION = 1


def dumps(arrays: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, value in arrays.items():
        raw = name.encode("utf-8")
        value = np.ascontiguousarray(value, dtype="<f8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack(f"<I{value.ndim}I", value.ndim, *value.shape))
        out.append(value.tobytes())
    return b"".join(out)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise InvalidArgumentError("checkpoint", blob[:4], "bad magic bytes")
    pos = 4

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise InvalidArgumentError("checkpoint", len(blob), "truncated file")
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise InvalidArgumentError("checkpoint version", version, f"only version {VERSION} is supported")
    arrays = {}
    for _ in range(count):
        (n,) = take("<I")
        name = blob[pos:pos + n].decode("utf-8")
        pos += n
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I")
        (data,) = take(f"<{int(np.prod(shape, dtype=np.int64)) * 8}s")
        arrays[name] = np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(blob):
        raise InvalidArgumentError("checkpoint", len(blob) - pos, "trailing bytes after last entry")
    return arrays


def save(net, path) -> None:
    Path(path).write_bytes(dumps(net.state_arrays()))


def load(net, path) -> None:
    """Load a checkpoint into ``net`` in place; names and shapes must match."""
    arrays = loads(Path(path).read_bytes())
    missing = set(net.state_arrays()) - set(arrays)
    if missing:
        raise InvalidArgumentError("checkpoint", sorted(missing), "missing entries")
    net.load_arrays(arrays)
