"""File formats for surfaces and matrices, plus atomic file writes.

Surface text format: one grid row per line, whitespace-separated heights,
``nan`` outside the aperture.

Surface binary format (little-endian)::

    bytes 0-3   magic b"SMAP"
    bytes 4-7   uint32 width_px
    bytes 8-11  uint32 height_px
    bytes 12-   float64 heights, row-major, height_px * width_px values,
                NaN outside the aperture

On import the aperture mask is recovered as the set of finite heights.
"""
from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .zernike import SurfaceMap

SURFACE_MAGIC = b"SMAP"
_HEADER = struct.Struct("<4sII")


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write ``data`` to a temporary sibling of ``path`` then rename over it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _masked_heights(surface: SurfaceMap) -> np.ndarray:
    out = np.full(surface.mask.shape, np.nan)
    out[surface.mask] = surface.values
    return out


def format_matrix(a: np.ndarray) -> str:
    """Row-major text rendering with round-trip float precision."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    return "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in a)


def parse_matrix(text: str) -> np.ndarray:
    rows = [line.split() for line in text.splitlines() if line.strip()]
    if not rows:
        raise ValueError("empty matrix file")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError("ragged matrix rows")
    return np.array([[float(v) for v in r] for r in rows])


def save_matrix_text(path, a: np.ndarray) -> None:
    atomic_write_text(path, format_matrix(a))


def load_matrix_text(path) -> np.ndarray:
    return parse_matrix(Path(path).read_text(encoding="utf-8"))


def save_surface_text(path, surface: SurfaceMap) -> None:
    save_matrix_text(path, _masked_heights(surface))


def load_surface_text(path) -> SurfaceMap:
    heights = load_matrix_text(path)
    mask = np.isfinite(heights)
    return SurfaceMap(np.where(mask, heights, 0.0), mask)


def surface_to_bytes(surface: SurfaceMap) -> bytes:
    heights = _masked_heights(surface)
    h, w = heights.shape
    return _HEADER.pack(SURFACE_MAGIC, w, h) + heights.astype("<f8").tobytes(order="C")


def surface_from_bytes(data: bytes) -> SurfaceMap:
    if len(data) < _HEADER.size:
        raise ValueError("truncated surface file")
    magic, w, h = _HEADER.unpack_from(data)
    if magic != SURFACE_MAGIC:
        raise ValueError(f"bad surface magic {magic!r}")
    body = data[_HEADER.size :]
    if len(body) != 8 * w * h:
        raise ValueError(f"surface body has {len(body)} bytes, expected {8 * w * h}")
    heights = np.frombuffer(body, dtype="<f8").reshape(h, w).astype(float)
    mask = np.isfinite(heights)
    return SurfaceMap(np.where(mask, heights, 0.0), mask)


def save_surface_binary(path, surface: SurfaceMap) -> None:
    atomic_write_bytes(path, surface_to_bytes(surface))


def load_surface_binary(path) -> SurfaceMap:
    return surface_from_bytes(Path(path).read_bytes())
