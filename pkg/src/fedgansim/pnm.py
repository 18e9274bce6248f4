"""8-bit binary PGM (P5) and PPM (P6) reading and writing."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import IngestionError


def _tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated integers after the magic, skipping comments."""
    out: list[int] = []
    pos = 2
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError("truncated header")
        out.append(int(data[start:pos]))
    # exactly one whitespace byte separates the header from the raster
    return out, pos + 1


def decode(data: bytes) -> np.ndarray:
    """Decode P5/P6 bytes into a uint8 array of shape (height, width, channels)."""
    magic = data[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise ValueError(f"unsupported magic {magic!r}")
    (width, height, maxval), start = _tokens(data, 3)
    if maxval != 255:
        raise ValueError(f"only 8-bit files are supported (maxval {maxval})")
    size = width * height * channels
    raster = data[start:start + size]
    if len(raster) != size:
        raise ValueError(f"raster has {len(raster)} bytes, expected {size}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels).copy()


def encode(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {img.dtype}")
    if img.ndim == 2:
        img = img[:, :, None]
    height, width, channels = img.shape
    if channels == 1:
        magic = b"P5"
    elif channels == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot encode {channels} channels")
    return magic + b"\n%d %d\n255\n" % (width, height) + np.ascontiguousarray(img).tobytes()


def read(path) -> np.ndarray:
    path = Path(path)
    try:
        return decode(path.read_bytes())
    except (OSError, ValueError) as exc:
        raise IngestionError(f"{path}: {exc}") from exc


def write(path, img: np.ndarray) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".partial")
    tmp.write_bytes(encode(img))
    os.replace(tmp, path)


def to_unit(img: np.ndarray) -> np.ndarray:
    """Map bytes to [-1, 1] via v / 127.5 - 1."""
    return img.astype(np.float64) / 127.5 - 1.0


def to_bytes(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_unit` with rounding and clipping."""
    return np.clip(np.rint((np.asarray(x) + 1.0) * 127.5), 0, 255).astype(np.uint8)
