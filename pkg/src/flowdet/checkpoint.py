"""Single-file container of named float32 tensors, with a version tag.

Layout (all little-endian): magic ``FDCK``, uint32 version, uint32 tensor
count; then per tensor: uint16 name length, UTF-8 name, uint8 rank,
uint32 extents, raw float32 data.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"FDCK"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_tensors(tensors: dict, path, version: int = VERSION) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", version, len(tensors)))
        for name in sorted(tensors):
            data = np.asarray(tensors[name], dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes(order="C"))


def load_tensors(path):
    """Returns (tensors dict, version)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint container (magic {magic!r})")
        version, count = struct.unpack("<II", fh.read(8))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * size), dtype="<f4").reshape(shape)
            tensors[name] = data.astype(np.float32)
    return tensors, version
