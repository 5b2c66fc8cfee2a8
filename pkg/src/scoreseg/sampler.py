"""Predictor-corrector sampling of the reverse VE diffusion, and ensembles of it.

A score function here is any callable ``score_fn(m, x, sigma)`` taking a
(B, H, W) stack of fields, the conditioning image and a scalar noise level,
and returning a (B, H, W) score stack.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NonFiniteError
from .score_model import apply
from .sde import SigmaSchedule, make_ladder, make_rng
from .sdf import decode_mask

__all__ = [
    "SamplerConfig",
    "SampleEnsemble",
    "predictor_step",
    "corrector_step",
    "sample",
    "sample_streams",
    "ensemble_sample",
    "model_score_fn",
]


@dataclass(frozen=True)
class SamplerConfig:
    K: int = 200
    J: int = 1
    r: float = 0.15
    threshold_tau: float = 3e-3
    ensemble_R: int = 16

    def __post_init__(self):
        if self.K < 2:
            raise ConfigError("K must be >= 2")
        if self.J < 0:
            raise ConfigError("J must be >= 0")
        if not self.r > 0:
            raise ConfigError("r must be > 0")
        if not self.threshold_tau >= 0:
            raise ConfigError("threshold_tau must be >= 0")
        if self.ensemble_R < 1:
            raise ConfigError("ensemble_R must be >= 1")


@dataclass
class SampleEnsemble:
    samples: np.ndarray  # (R, H, W)
    mean: np.ndarray
    std: np.ndarray
    mmse_mask: np.ndarray
    threshold_tau: float
    zero_score_events: int = 0


def model_score_fn(model, dtype=np.float32):
    """Wrap a :class:`ScoreModel` as a sampler score function (single precision by default)."""
    m = model.astype(dtype) if model.theta.dtype != dtype else model

    def score_fn(mt, x, sigma):
        return apply(m, mt, x, sigma).astype(np.float64)

    return score_fn


def _check_finite(g, level):
    if not np.all(np.isfinite(g)):
        raise NonFiniteError(f"non-finite score at ladder level {level}", index=level)


def _predict(m, g, z, sigma_next, sigma_k):
    var = sigma_next**2 - sigma_k**2
    return m + var * g + np.sqrt(var) * z


def _correct(m, g, z, r):
    # per-item global L2 norms; items with a zero score are left untouched
    axes = tuple(range(1, m.ndim))
    gn = np.sqrt(np.sum(g * g, axis=axes, keepdims=True))
    zn = np.sqrt(np.sum(z * z, axis=axes, keepdims=True))
    zero = gn == 0
    eps = 2.0 * (r * zn / np.where(zero, 1.0, gn)) ** 2
    out = m + eps * g + np.sqrt(2.0 * eps) * z
    return np.where(zero, m, out), int(zero.sum()), eps


def predictor_step(m_next, score_fn, x, sigma_next, sigma_k, rng, z=None, level=None):
    """Reverse-diffusion step from ``sigma_next`` down to ``sigma_k``."""
    if not sigma_next >= sigma_k >= 0:
        raise ValueError(f"need sigma_next >= sigma_k >= 0, got {sigma_next}, {sigma_k}")
    m = np.asarray(m_next, dtype=np.float64)
    if z is None:
        z = rng.standard_normal(m.shape)
    g = np.asarray(score_fn(m[None], x, sigma_next))[0]
    _check_finite(g, level)
    return _predict(m, g, z, sigma_next, sigma_k)


def corrector_step(m, score_fn, x, sigma_k, r, rng, z=None, return_eps=False):
    """One Langevin step at ``sigma_k`` with step size 2 (r |z| / |g|)^2.

    A zero score leaves ``m`` unchanged.
    """
    if not sigma_k > 0 or not r > 0:
        raise ValueError("sigma_k and r must be > 0")
    m = np.asarray(m, dtype=np.float64)
    if z is None:
        z = rng.standard_normal(m.shape)
    g = np.asarray(score_fn(m[None], x, sigma_k))[0]
    _check_finite(g, None)
    out, _, eps = _correct(m[None], g[None], np.asarray(z)[None], r)
    if return_eps:
        return out[0], float(eps.ravel()[0])
    return out[0]


def sample_streams(score_fn, x, sched: SigmaSchedule, cfg: SamplerConfig, rngs):
    """Run one predictor-corrector chain per generator in ``rngs``, batched.

    Each chain draws its noise only from its own generator, so results do not
    depend on which other chains share the batch. Returns ``(fields, zero_score_events)``.
    """
    x = np.asarray(x, dtype=np.float64)
    shape = x.shape
    ladder = make_ladder(sched, cfg.K)
    m = np.stack([rng.standard_normal(shape) for rng in rngs]) * ladder[-1]
    events = 0
    for k in range(cfg.K - 2, -1, -1):
        s_next, s_k = float(ladder[k + 1]), float(ladder[k])
        z = np.stack([rng.standard_normal(shape) for rng in rngs])
        g = np.asarray(score_fn(m, x, s_next), dtype=np.float64)
        _check_finite(g, k + 1)
        m = _predict(m, g, z, s_next, s_k)
        for _ in range(cfg.J):
            z = np.stack([rng.standard_normal(shape) for rng in rngs])
            g = np.asarray(score_fn(m, x, s_k), dtype=np.float64)
            _check_finite(g, k)
            m, n_zero, _ = _correct(m, g, z, cfg.r)
            events += n_zero
    return m, events


def sample(score_fn, x, sched: SigmaSchedule, cfg: SamplerConfig, rng):
    """A single reverse-diffusion sample (not thresholded)."""
    out, _ = sample_streams(score_fn, x, sched, cfg, [rng])
    return out[0]


def ensemble_sample(score_fn, x, sched: SigmaSchedule, cfg: SamplerConfig, seed, batch_size: int = 32):
    """``cfg.ensemble_R`` independent samples; chain j uses stream ``(*seed, j)``.

    ``seed`` is an int or a tuple of ints (e.g. ``(master_seed, image_index)``).

    The MMSE mask thresholds the ensemble mean, never the individual samples.
    """
    R = cfg.ensemble_R
    prefix = tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)
    chunks, events = [], 0
    for start in range(0, R, batch_size):
        rngs = [make_rng(*prefix, j) for j in range(start, min(R, start + batch_size))]
        out, ev = sample_streams(score_fn, x, sched, cfg, rngs)
        chunks.append(out)
        events += ev
    samples = np.concatenate(chunks)
    mean = samples.mean(axis=0)
    std = samples.std(axis=0)
    return SampleEnsemble(
        samples=samples,
        mean=mean,
        std=std,
        mmse_mask=decode_mask(mean, cfg.threshold_tau),
        threshold_tau=cfg.threshold_tau,
        zero_score_events=events,
    )
