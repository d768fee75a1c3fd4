"""Minimal grayscale file support: binary PGM (P5) and 8-bit PNG."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PilImage

__all__ = ["read_pgm", "write_pgm", "write_png", "read_image"]


def write_pgm(path: str | Path, values: np.ndarray, maxval: int) -> None:
    """Write integer pixel values as a binary P5 file.

    Values above 255 need ``maxval`` up to 65535 and are stored big-endian,
    two bytes per sample.
    """
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("expected a 2-D array")
    if not 0 < maxval < 65536:
        raise ValueError("maxval must lie in [1, 65535]")
    rounded = np.rint(values).astype(np.int64)
    if rounded.min() < 0 or rounded.max() > maxval:
        raise ValueError("pixel values fall outside [0, maxval]")
    height, width = values.shape
    header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as stream:
        stream.write(header)
        stream.write(rounded.astype(dtype).tobytes())


def _next_token(buffer: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(buffer):
        ch = buffer[pos : pos + 1]
        if ch == b"#":
            while pos < len(buffer) and buffer[pos : pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < len(buffer) and not buffer[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ValueError("truncated PGM header")
    return buffer[start:pos], pos


def read_pgm(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a binary P5 file; returns ``(values, maxval)`` with int64 values."""
    buffer = Path(path).read_bytes()
    magic, pos = _next_token(buffer, 0)
    if magic != b"P5":
        raise ValueError(f"not a binary PGM file: magic {magic!r}")
    width_tok, pos = _next_token(buffer, pos)
    height_tok, pos = _next_token(buffer, pos)
    maxval_tok, pos = _next_token(buffer, pos)
    width, height, maxval = int(width_tok), int(height_tok), int(maxval_tok)
    if not 0 < maxval < 65536:
        raise ValueError("maxval out of range")
    pos += 1  # single whitespace byte after the header
    dtype = ">u2" if maxval > 255 else "u1"
    count = width * height
    flat = np.frombuffer(buffer, dtype=dtype, count=count, offset=pos)
    if flat.size != count:
        raise ValueError("truncated PGM pixel data")
    return flat.astype(np.int64).reshape(height, width), maxval


def write_png(path: str | Path, grid: np.ndarray, peak: float | None = None) -> None:
    """Write a float grid as an 8-bit grayscale PNG, scaled to ``peak``."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 2:
        raise ValueError("expected a 2-D array")
    top = peak if peak is not None else (grid.max() if grid.size else 1.0)
    if top <= 0:
        top = 1.0
    scaled = np.clip(grid / top, 0.0, 1.0)
    PilImage.fromarray((scaled * 255).round().astype(np.uint8), mode="L").save(path)


def read_image(path: str | Path) -> np.ndarray:
    """Read a PGM or PNG file as a 2-D float array of raw sample values."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        values, _ = read_pgm(path)
        return values.astype(float)
    with PilImage.open(path) as img:
        return np.asarray(img.convert("F"), dtype=float)
