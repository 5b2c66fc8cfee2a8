"""Overlap metrics and ensemble uncertainty/error maps."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .sdf import boundary_distance, validate_mask

__all__ = ["MetricEntry", "MetricReport", "f1_iou", "UncertaintyReport", "uncertainty_maps"]


@dataclass(frozen=True)
class MetricEntry:
    f1: float
    iou: float


@dataclass
class MetricReport:
    """Per-image F1/IoU; dataset means are averages of per-image values."""

    image_ids: list = field(default_factory=list)
    f1: list = field(default_factory=list)
    iou: list = field(default_factory=list)

    def add(self, image_id, entry: MetricEntry) -> None:
        self.image_ids.append(image_id)
        self.f1.append(entry.f1)
        self.iou.append(entry.iou)

    @property
    def mean_f1(self) -> float:
        return float(np.mean(self.f1)) if self.f1 else float("nan")

    @property
    def mean_iou(self) -> float:
        return float(np.mean(self.iou)) if self.iou else float("nan")


def f1_iou(pred, gt) -> MetricEntry:
    """Pixelwise foreground F1 and IoU. Two empty masks score 1 on both."""
    p = validate_mask(pred).astype(bool)
    g = validate_mask(gt).astype(bool)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    tp = int(np.sum(p & g))
    fp = int(np.sum(p & ~g))
    fn = int(np.sum(~p & g))
    if tp + fp + fn == 0:
        return MetricEntry(1.0, 1.0)
    return MetricEntry(2 * tp / (2 * tp + fp + fn), tp / (tp + fp + fn))


@dataclass
class UncertaintyReport:
    std: np.ndarray
    error: np.ndarray  # |ensemble mean - ground-truth SDF|
    xor: np.ndarray  # MMSE mask disagreement with ground truth
    band: np.ndarray  # pixels within `band` px of the true boundary
    band_mean_std: float
    far_mean_std: float
    rank_correlation: float  # Spearman between std and error fields


def uncertainty_maps(ens, gt_mask, gt_sdf, band: float = 3) -> UncertaintyReport:
    gt_mask = validate_mask(gt_mask)
    gt_sdf = np.asarray(gt_sdf, dtype=np.float64)
    if ens.mean.shape != gt_mask.shape or gt_sdf.shape != gt_mask.shape:
        raise ValueError("ensemble and ground truth shapes differ")
    if band < 1:
        raise ValueError(f"band must be >= 1, got {band}")
    std = ens.std
    error = np.abs(ens.mean - gt_sdf)
    xor = (ens.mmse_mask.astype(bool) ^ gt_mask.astype(bool)).astype(np.uint8)
    near = boundary_distance(gt_mask) <= band
    band_mean = float(std[near].mean()) if near.any() else float("nan")
    far_mean = float(std[~near].mean()) if (~near).any() else float("nan")
    if np.ptp(std) == 0 or np.ptp(error) == 0:
        rho = float("nan")
    else:
        rho = float(spearmanr(std.ravel(), error.ravel()).statistic)
    return UncertaintyReport(std, error, xor, near, band_mean, far_mean, rho)
