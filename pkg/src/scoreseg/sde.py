"""Variance-exploding noise schedule, perturbation kernel and DSM target."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "SigmaSchedule",
    "sigma_at",
    "make_ladder",
    "perturb",
    "dsm_target",
    "make_rng",
]


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for stream ``(seed, *stream)``.

    Streams with different suffixes are statistically independent, so callers
    can split work (ensemble members, batch items) without coordination.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass(frozen=True)
class SigmaSchedule:
    sigma_min: float = 1e-3
    sigma_max: float = 5.0
    horizon_T: float = 1.0

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ConfigError(
                f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}"
            )
        if self.horizon_T != 1.0:
            raise ConfigError("horizon_T is fixed to 1.0")


def sigma_at(sched: SigmaSchedule, t):
    """sigma(t) = sigma_min * (sigma_max / sigma_min) ** t for t in [0, 1]."""
    ta = np.asarray(t, dtype=np.float64)
    if np.any(~np.isfinite(ta)) or np.any(ta < 0.0) or np.any(ta > sched.horizon_T):
        raise ValueError(f"t must lie in [0, {sched.horizon_T}], got {t}")
    out = sched.sigma_min * (sched.sigma_max / sched.sigma_min) ** (ta / sched.horizon_T)
    return float(out) if out.ndim == 0 else out


def make_ladder(sched: SigmaSchedule, K: int) -> np.ndarray:
    """K geometrically spaced noise levels, increasing from sigma_min to sigma_max."""
    if int(K) != K or K < 2:
        raise ConfigError(f"ladder needs K >= 2 levels, got {K}")
    K = int(K)
    return sigma_at(sched, np.arange(K) / (K - 1))


def perturb(m0, sigma, z):
    """Sample of the perturbation kernel: m0 + sigma * z.

    ``sigma`` may be a scalar or one value per leading batch item.
    """
    m0 = np.asarray(m0)
    z = np.asarray(z)
    if m0.shape != z.shape:
        raise ValueError(f"shape mismatch: m0 {m0.shape} vs z {z.shape}")
    return m0 + _bcast(sigma, m0.ndim) * z


def dsm_target(mt, m0, sigma):
    """Score of the Gaussian perturbation kernel, -(mt - m0) / sigma**2."""
    mt = np.asarray(mt)
    m0 = np.asarray(m0)
    if mt.shape != m0.shape:
        raise ValueError(f"shape mismatch: mt {mt.shape} vs m0 {m0.shape}")
    s = np.asarray(sigma, dtype=np.float64)
    if np.any(~(s > 0)):
        raise ValueError("sigma must be > 0")
    return -(mt - m0) / _bcast(s, mt.ndim) ** 2


def _bcast(sigma, ndim):
    # per-item sigma of shape (B,) against fields of shape (B, H, W)
    s = np.asarray(sigma, dtype=np.float64)
    if s.ndim == 0:
        return s
    return s.reshape(s.shape + (1,) * (ndim - s.ndim))
