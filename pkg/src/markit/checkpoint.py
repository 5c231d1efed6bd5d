"""Flat binary checkpoint format for named parameter tensors.

Layout: the magic string ``MARKIT1``, then one record per tensor in
ascending name order: name length (u64 LE), utf-8 name bytes, rank (u64 LE),
one extent per axis (u64 LE each), then the payload as float32 little-endian
in C order.  The reader consumes records until end of file, so the set of
tensors is self-describing; truncation or a bad magic raises ValueError.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"MARKIT1"


def save_params(path, params: dict) -> None:
    """Write name -> array mappings; values may be Tensors or ndarrays."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        for name in sorted(params):
            arr = params[name]
            if not isinstance(arr, np.ndarray):
                arr = arr.data  # Tensor
            data = np.asarray(arr, dtype="<f4", order="C")
            enc = name.encode("utf-8")
            f.write(struct.pack("<Q", len(enc)))
            f.write(enc)
            f.write(struct.pack("<Q", data.ndim))
            for ext in data.shape:
                f.write(struct.pack("<Q", ext))
            f.write(data.tobytes(order="C"))


def load_params(path) -> dict:
    """Read back a mapping name -> float32 ndarray."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: bad magic, not a checkpoint file")
    out = {}
    off = len(MAGIC)
    total = len(blob)

    def take(n):
        nonlocal off
        if off + n > total:
            raise ValueError(f"{path}: truncated checkpoint")
        chunk = blob[off : off + n]
        off += n
        return chunk

    while off < total:
        (name_len,) = struct.unpack("<Q", take(8))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<Q", take(8))
        shape = tuple(struct.unpack("<Q", take(8))[0] for _ in range(rank))
        count = 1
        for ext in shape:
            count *= ext
        payload = take(count * 4)
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return out
