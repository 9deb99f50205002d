"""Flat binary parameter container.

Layout: magic "DGQ1", then per array: name length (u64 LE), UTF-8 name,
rank (u64 LE), dims (u64 LE each), payload as float64 LE.  Round trips are
bit-exact; order is preserved.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Iterable, Tuple

import numpy as np

from .errors import DataError

MAGIC = b"DGQ1"


def save_checkpoint(path, arrays: Iterable[Tuple[str, np.ndarray]]) -> None:
    path = Path(path)
    try:
        with open(path, "wb") as f:
            f.write(MAGIC)
            for name, arr in arrays:
                a = np.asarray(arr, dtype=np.float64)
                encoded = name.encode("utf-8")
                f.write(struct.pack("<Q", len(encoded)))
                f.write(encoded)
                f.write(struct.pack("<Q", a.ndim))
                if a.ndim:
                    f.write(struct.pack(f"<{a.ndim}Q", *a.shape))
                f.write(a.astype("<f8", copy=False).tobytes())
    except OSError as exc:
        raise DataError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> Dict[str, np.ndarray]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:4] != MAGIC:
        raise DataError(f"{path} is not a checkpoint: magic {raw[:4]!r}")
    arrays: Dict[str, np.ndarray] = {}
    pos = 4

    def take(count, what):
        nonlocal pos
        if pos + count > len(raw):
            raise DataError(f"truncated checkpoint {path}: reading {what}")
        chunk = raw[pos:pos + count]
        pos += count
        return chunk

    while pos < len(raw):
        (name_len,) = struct.unpack("<Q", take(8, "name length"))
        name = take(name_len, "name").decode("utf-8")
        if name in arrays:
            raise DataError(f"duplicate array {name!r} in {path}")
        (rank,) = struct.unpack("<Q", take(8, "rank"))
        if rank > 8:
            raise DataError(f"implausible rank {rank} for {name!r} in {path}")
        shape = struct.unpack(f"<{rank}Q", take(8 * rank, "dims")) if rank else ()
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = take(8 * count, f"payload of {name!r}")
        arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    return arrays
