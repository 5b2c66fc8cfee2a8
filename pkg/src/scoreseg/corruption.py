"""Forward-corruption views of a training target and their thresholded masks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sde import SigmaSchedule, perturb, sigma_at
from .sdf import boundary_distance, decode_mask
from .training import SyntheticSample, training_target


@dataclass(frozen=True)
class CorruptedView:
    t: float
    mode: str
    field: np.ndarray
    mask: np.ndarray


def corrupt(sample: SyntheticSample, t: float, mode: str, sched: SigmaSchedule, rng, tau: float) -> CorruptedView:
    """Perturb the clean target at time ``t`` and threshold the result at ``tau``."""
    target = training_target(sample, mode)
    field = perturb(target, sigma_at(sched, t), rng.standard_normal(target.shape))
    return CorruptedView(float(t), mode, field, decode_mask(field, tau))


def flip_rates(gt_mask, mask, near_px: float = 2.0) -> tuple[float, float]:
    """Fraction of pixels that changed label, within ``near_px`` of the true boundary and beyond it."""
    flipped = np.asarray(mask).astype(bool) != np.asarray(gt_mask).astype(bool)
    near = boundary_distance(gt_mask) <= near_px
    near_rate = float(flipped[near].mean()) if near.any() else float("nan")
    far_rate = float(flipped[~near].mean()) if (~near).any() else float("nan")
    return near_rate, far_rate
