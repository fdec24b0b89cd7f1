"""Flat binary tensor files.

Layout: the 8 magic bytes ``HALCKPT1`` then, per tensor, ``u32`` name length,
UTF-8 name, ``u32`` rank, ``u32`` extents and raw float32 values, all
little-endian. Used for model checkpoints and for raw dataset import.
"""
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"HALCKPT1"


def save_tensors(path, tensors):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, value in tensors.items():
            value = np.asarray(value)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", value.ndim))
            fh.write(struct.pack(f"<{value.ndim}I", *value.shape))
            fh.write(np.ascontiguousarray(value, dtype="<f4").tobytes())


def load_tensors(path):
    """Read every tensor in ``path`` into a dict of float32 arrays (in file order)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:8]!r}")
    out = {}
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError(f"{path}: truncated at byte {pos}")
        chunk = blob[pos: pos + n]
        pos += n
        return chunk

    while pos < len(blob):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(take(4 * count), dtype="<f4").astype(np.float32)
        out[name] = data.reshape(shape)
    return out
