"""Flat binary parameter container.

Layout: the 8-byte magic ``SDNCKPT1`` followed by entries until EOF, each
being name length (u32 LE), UTF-8 name, rank (u32 LE), one u32 LE per
dimension, then the raw float64 LE payload in row-major order.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..errors import CheckpointFormatError

MAGIC = b"SDNCKPT1"


def encode_state(state: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC]
    for name, arr in state.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(chunks)


def decode_state(blob: bytes) -> OrderedDict[str, np.ndarray]:
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError("missing SDNCKPT1 header")
    pos = len(MAGIC)
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    try:
        while pos < len(blob):
            (name_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            end = pos + 8 * count
            if end > len(blob):
                raise CheckpointFormatError(f"truncated payload for {name!r}")
            out[name] = np.frombuffer(blob[pos:end], dtype="<f8").reshape(dims).astype(np.float64)
            pos = end
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointFormatError(f"corrupt checkpoint: {exc}") from exc
    return out


def save_checkpoint(path: str | Path, state: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_state(state))


def load_checkpoint(path: str | Path) -> OrderedDict[str, np.ndarray]:
    return decode_state(Path(path).read_bytes())
