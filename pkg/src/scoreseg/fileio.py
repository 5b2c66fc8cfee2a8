"""Binary PGM masks/images and the ``SDF1`` float raster format."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FileFormatError

SDF_MAGIC = b"SDF1"
_SDF_HEADER = struct.Struct("<4sIIf")


def write_pgm(path, arr, *, binary_mask: bool = False) -> None:
    """Write an 8-bit P5 PGM.

    ``binary_mask`` maps labels {0, 1} to {0, 255}; otherwise ``arr`` is taken
    as intensities in [0, 1] and quantized.
    """
    a = np.asarray(arr)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {a.shape}")
    if binary_mask:
        data = (a.astype(bool) * 255).astype(np.uint8)
    else:
        data = np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _pgm_tokens(buf: bytes):
    # header tokens, skipping '#' comments; yields (token, end_offset)
    i, n = 0, len(buf)
    while True:
        while i < n and buf[i : i + 1].isspace():
            i += 1
        if i < n and buf[i : i + 1] == b"#":
            while i < n and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not buf[j : j + 1].isspace():
            j += 1
        if j == i:
            raise FileFormatError("truncated PGM header")
        yield buf[i:j], j
        i = j


def read_pgm(path, *, binary_mask: bool = False) -> np.ndarray:
    """Read an 8-bit P5 PGM as a uint8 mask (``binary_mask``) or floats in [0, 1]."""
    buf = Path(path).read_bytes()
    toks = _pgm_tokens(buf)
    magic, _ = next(toks)
    if magic != b"P5":
        raise FileFormatError(f"{path}: not a binary PGM (magic {magic!r})")
    w = int(next(toks)[0])
    h = int(next(toks)[0])
    maxval_tok, end = next(toks)
    maxval = int(maxval_tok)
    if maxval != 255:
        raise FileFormatError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    # exactly one whitespace byte separates header from raster
    raw = buf[end + 1 : end + 1 + w * h]
    if len(raw) != w * h:
        raise FileFormatError(f"{path}: raster truncated")
    data = np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
    if binary_mask:
        if not np.all((data == 0) | (data == 255)):
            raise FileFormatError(f"{path}: mask PGM must contain only 0 and 255")
        return (data == 255).astype(np.uint8)
    return data.astype(np.float64) / 255.0


def write_sdf(path, field, delta: float) -> None:
    """Write a float raster: 16-byte header (magic, width, height, delta) + LE float32 values."""
    a = np.asarray(field)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {a.shape}")
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(_SDF_HEADER.pack(SDF_MAGIC, w, h, float(delta)))
        fh.write(a.astype("<f4").tobytes())


def read_sdf(path) -> tuple[np.ndarray, float]:
    """Read an ``SDF1`` raster; returns ``(field as float64, delta)``."""
    buf = Path(path).read_bytes()
    if len(buf) < _SDF_HEADER.size:
        raise FileFormatError(f"{path}: file too short for SDF1 header")
    magic, w, h, delta = _SDF_HEADER.unpack_from(buf)
    if magic != SDF_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}")
    body = buf[_SDF_HEADER.size :]
    if len(body) != 4 * w * h:
        raise FileFormatError(f"{path}: expected {4 * w * h} data bytes, found {len(body)}")
    field = np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)
    return field, float(delta)
