"""Binary PGM (P5) and PPM (P6) readers/writers, 8-bit only.

These formats are the canonical on-disk rasters for this package because they
are bit-exactly specifiable: a fixed ASCII header followed by raw bytes.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DisRefineError


class NetpbmError(DisRefineError):
    """Malformed or unsupported netpbm file."""


def _read_tokens(data: bytes, count: int, pos: int) -> tuple[list[int], int]:
    """Parse `count` whitespace-separated integer tokens, skipping # comments."""
    tokens: list[int] = []
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise NetpbmError("truncated netpbm header")
        tokens.append(int(data[start:pos]))
    return tokens, pos


def _read(path, magic: bytes, channels: int) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(magic):
        raise NetpbmError(f"{path}: expected {magic.decode()} file")
    (width, height, maxval), pos = _read_tokens(data, 3, len(magic))
    if maxval <= 0 or maxval > 255:
        raise NetpbmError(f"{path}: unsupported maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    expected = width * height * channels
    raw = data[pos : pos + expected]
    if len(raw) != expected:
        raise NetpbmError(f"{path}: payload has {len(raw)} bytes, expected {expected}")
    arr = np.frombuffer(raw, dtype=np.uint8)
    if maxval != 255:
        arr = np.round(arr.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return arr.reshape(shape).copy()


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM into a (H, W) uint8 array rescaled to maxval 255."""
    return _read(path, b"P5", 1)


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM into a (H, W, 3) uint8 array rescaled to maxval 255."""
    return _read(path, b"P6", 3)


def write_pgm(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise NetpbmError("PGM payload must be 2D")
    if arr.dtype != np.uint8:
        raise NetpbmError("PGM payload must be uint8")
    h, w = arr.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + arr.tobytes())


def write_ppm(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise NetpbmError("PPM payload must have shape (H, W, 3)")
    if arr.dtype != np.uint8:
        raise NetpbmError("PPM payload must be uint8")
    h, w, _ = arr.shape
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + arr.tobytes())


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Quantize [0,1] doubles to 8-bit, round-half-even, for the I/O boundary."""
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
