"""Binary tensor container, PGM export, and small text formats.

SART container layout (all little-endian):

====================  =========================================
magic                 4 bytes, ``b"SART"``
version               u8, currently 1
rank                  u8
dims                  ``rank`` x u32
dtype tag             3 ASCII bytes, ``b"f32"`` or ``b"f64"``
payload               raw element bytes, row-major
====================  =========================================
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

SART_MAGIC = b"SART"
SART_VERSION = 1

_DTYPE_TAGS = {b"f32": np.dtype("<f4"), b"f64": np.dtype("<f8")}
_TAG_FOR_KIND = {np.dtype(np.float32): b"f32", np.dtype(np.float64): b"f64"}


class SartFormatError(RuntimeError):
    """Raised when a SART container is malformed or unsupported."""


def write_sart(path, array: np.ndarray) -> None:
    """Write ``array`` (float32 or float64) to ``path`` as a SART container."""
    array = np.ascontiguousarray(array)
    dt = np.dtype(array.dtype)
    if dt not in _TAG_FOR_KIND:
        raise SartFormatError(f"unsupported dtype {dt}; use float32 or float64")
    if array.ndim > 255:
        raise SartFormatError("rank exceeds u8")
    header = bytearray()
    header += SART_MAGIC
    header += struct.pack("<BB", SART_VERSION, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    header += _TAG_FOR_KIND[dt]
    payload = array.astype(dt.newbyteorder("<"), copy=False).tobytes()
    Path(path).write_bytes(bytes(header) + payload)


def read_sart(path) -> np.ndarray:
    """Read a SART container back into a numpy array."""
    raw = Path(path).read_bytes()
    if len(raw) < 6 or raw[:4] != SART_MAGIC:
        raise SartFormatError(f"{path}: not a SART container")
    version, rank = struct.unpack_from("<BB", raw, 4)
    if version != SART_VERSION:
        raise SartFormatError(f"{path}: unsupported version {version}")
    off = 6
    if len(raw) < off + 4 * rank + 3:
        raise SartFormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", raw, off)
    off += 4 * rank
    tag = raw[off : off + 3]
    off += 3
    if tag not in _DTYPE_TAGS:
        raise SartFormatError(f"{path}: unknown dtype tag {tag!r}")
    dt = _DTYPE_TAGS[tag]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    expected = count * dt.itemsize
    if len(raw) - off != expected:
        raise SartFormatError(
            f"{path}: payload is {len(raw) - off} bytes, expected {expected}"
        )
    arr = np.frombuffer(raw, dtype=dt, count=count, offset=off)
    return arr.reshape(dims).astype(dt.newbyteorder("="), copy=True)


def write_pgm(path, image: np.ndarray) -> None:
    """Write a 2-D array as binary 8-bit PGM, min-max normalized per image.

    A constant image maps to all zeros.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PGM export expects a 2-D array, got shape {img.shape}")
    lo, hi = float(img.min()), float(img.max())
    if hi > lo:
        scaled = (img - lo) * (255.0 / (hi - lo))
    else:
        scaled = np.zeros_like(img)
    data = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


def write_kv(path, pairs: dict) -> None:
    """Write a flat ``key = value`` text document (one pair per line)."""
    lines = [f"{k} = {v}" for k, v in pairs.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_kv(path) -> dict:
    """Read a ``key = value`` document written by :func:`write_kv`."""
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(" = ")
        out[key] = value
    return out
