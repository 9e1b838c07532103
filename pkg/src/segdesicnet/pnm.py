"""Binary PPM (P6) and PGM (P5) rasters, 8-bit only."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _header(kind: bytes, width: int, height: int) -> bytes:
    return kind + b"\n%d %d\n255\n" % (width, height)


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"PPM needs an H x W x 3 uint8 array, got {image.shape} {image.dtype}")
    h, w = image.shape[:2]
    Path(path).write_bytes(_header(b"P6", w, h) + np.ascontiguousarray(image).tobytes())


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError(f"PGM needs an H x W uint8 array, got {image.shape} {image.dtype}")
    h, w = image.shape
    Path(path).write_bytes(_header(b"P5", w, h) + np.ascontiguousarray(image).tobytes())


def _tokens(blob: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    out: list[bytes] = []
    pos = 0
    while len(out) < count:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PNM header")
        out.append(blob[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return out, pos + 1


def read_pnm(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _tokens(blob, 4)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported PNM magic {magic!r}")
    if int(maxval) != 255:
        raise ValueError(f"{path}: only 8-bit rasters are supported (maxval {int(maxval)})")
    w, h = int(w), int(h)
    channels = 3 if magic == b"P6" else 1
    n = w * h * channels
    if len(blob) - offset < n:
        raise ValueError(f"{path}: raster truncated")
    data = np.frombuffer(blob, dtype=np.uint8, count=n, offset=offset)
    return data.reshape((h, w, 3) if channels == 3 else (h, w)).copy()


read_ppm = read_pnm
read_pgm = read_pnm
