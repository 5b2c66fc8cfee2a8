"""Truncated, normalized signed distance fields for binary masks.

Masks are ``(H, W)`` arrays of 0/1 (1 = object). SDF maps are float64 arrays
of the same shape with values in ``[-1, 1]``: negative inside the object,
exactly 0 on its boundary, positive outside, in units of the truncation
distance ``delta``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SdfConfig",
    "default_delta",
    "validate_mask",
    "boundary_pixels",
    "boundary_mask",
    "squared_boundary_distance",
    "boundary_distance",
    "encode_sdf",
    "brute_force_sdf",
    "decode_mask",
]


def default_delta(grid: int) -> float:
    return 10.0 if grid >= 64 else 5.0


@dataclass(frozen=True)
class SdfConfig:
    delta: float = 5.0
    threshold_tau: float = 3e-3

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if not self.threshold_tau >= 0:
            raise ValueError(f"threshold_tau must be >= 0, got {self.threshold_tau}")


def validate_mask(mask) -> np.ndarray:
    """Return ``mask`` as a uint8 (H, W) array, raising on anything that is not 0/1."""
    m = np.asarray(mask)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"mask must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("mask labels must be 0 or 1")
    return m.astype(np.uint8)


def boundary_mask(mask) -> np.ndarray:
    """Foreground pixels with a 4-neighbour that is background or off-grid."""
    m = validate_mask(mask).astype(bool)
    # off-grid counts as background
    padded = np.pad(m, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return m & ~interior


def boundary_pixels(mask) -> set[tuple[int, int]]:
    """Boundary pixel coordinates as a set of ``(row, col)`` tuples."""
    rows, cols = np.nonzero(boundary_mask(mask))
    return set(zip(rows.tolist(), cols.tolist()))


def _lower_envelope_1d(f: list[float]) -> list[float]:
    # d[q] = min_p (q - p)^2 + f[p] by the lower envelope of parabolas
    # (Felzenszwalb & Huttenlocher). Sites with f = inf are skipped.
    n = len(f)
    sites = [p for p in range(n) if f[p] != math.inf]
    if not sites:
        return [math.inf] * n
    # v: parabola apexes on the envelope; z[i]: left end of v[i]'s interval
    v = [sites[0]]
    z = [-math.inf, math.inf]
    for q in sites[1:]:
        fq = f[q] + q * q
        while True:
            p = v[-1]
            s = (fq - (f[p] + p * p)) / (2 * q - 2 * p)
            if s > z[-2]:
                break
            v.pop()
            z.pop()
        v.append(q)
        z[-1] = s
        z.append(math.inf)
    out = [0.0] * n
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        p = v[k]
        out[q] = (q - p) * (q - p) + f[p]
    return out


def squared_boundary_distance(mask) -> np.ndarray:
    """Exact squared Euclidean distance from each pixel centre to the nearest boundary pixel.

    Two separable passes of the 1-D lower-envelope transform; values are
    integers stored as float64 (``inf`` when the mask has no boundary).
    """
    b = boundary_mask(mask)
    h, w = b.shape
    f = np.where(b, 0.0, math.inf)
    cols = np.empty_like(f)
    for j in range(w):
        cols[:, j] = _lower_envelope_1d(f[:, j].tolist())
    out = np.empty_like(f)
    for i in range(h):
        out[i, :] = _lower_envelope_1d(cols[i, :].tolist())
    return out


def boundary_distance(mask) -> np.ndarray:
    """Unsigned, untruncated distance to the nearest boundary pixel."""
    return np.sqrt(squared_boundary_distance(mask))


def _signed_truncated(mask: np.ndarray, d2: np.ndarray, delta: float) -> np.ndarray:
    fg = mask.astype(bool)
    if not np.isfinite(d2).any():
        return np.where(fg, -1.0, 1.0)
    mag = np.minimum(np.sqrt(d2), delta) / delta
    out = np.where(fg, -mag, mag)
    out[d2 == 0] = 0.0
    return out


def encode_sdf(mask, cfg: SdfConfig | None = None) -> np.ndarray:
    """Truncated signed distance map of ``mask`` normalized to ``[-1, 1]``."""
    cfg = cfg or SdfConfig()
    m = validate_mask(mask)
    return _signed_truncated(m, squared_boundary_distance(m), float(cfg.delta))


def brute_force_sdf(mask, cfg: SdfConfig | None = None) -> np.ndarray:
    """Reference implementation of :func:`encode_sdf` by exhaustive search.

    O(H * W * |boundary|); meant for small grids in tests.
    """
    cfg = cfg or SdfConfig()
    m = validate_mask(mask)
    h, w = m.shape
    fg = m.astype(bool)
    bd = sorted(boundary_pixels(m))
    if not bd:
        return np.where(fg, -1.0, 1.0)
    delta = float(cfg.delta)
    out = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            best = min((i - bi) ** 2 + (j - bj) ** 2 for bi, bj in bd)
            if best == 0:
                out[i, j] = 0.0
                continue
            v = min(math.sqrt(best), delta) / delta
            out[i, j] = -v if fg[i, j] else v
    return out


def decode_mask(sdf, tau: float = 0.0) -> np.ndarray:
    """Foreground wherever the field is at or below ``tau``."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    return (np.asarray(sdf) <= tau).astype(np.uint8)
