# Predictor-corrector sampling, MMSE ensembles and uncertainty maps.
#
# A closed-form Gaussian score stands in for a trained network: if the data is
# N(mu, s2) per pixel, the noised score is -(m - mu) / (s2 + sigma^2), and the
# sampler should return draws with mean mu and variance s2 + sigma_min^2.
#
# Run:  python3 demos/04_sampling_and_uncertainty.py

import numpy as np

from scoreseg import (
    AnalyticGaussianScore,
    SamplerConfig,
    SigmaSchedule,
    encode_sdf,
    ensemble_sample,
    f1_iou,
    uncertainty_maps,
)

sched = SigmaSchedule()

# A disc as ground truth; its SDF is the mean of the "posterior".
yy, xx = np.mgrid[:24, :24]
gt = ((yy - 11.5) ** 2 + (xx - 11.5) ** 2 <= 36).astype(np.uint8)
gt_sdf = encode_sdf(gt)

# The oracle's spread is the same at every pixel, so the boundary band and the
# far region get the same std here. A trained network is the interesting case:
# there the std concentrates on the contour (see tests/test_acceptance.py).
s2 = 0.02
oracle = AnalyticGaussianScore(gt_sdf, s2)

ens = ensemble_sample(oracle, np.zeros((24, 24)), sched, SamplerConfig(K=200, J=1, r=0.15, ensemble_R=32), seed=5)
print(f"ensemble std {ens.std.mean():.4f}, expected {np.sqrt(s2 + 1e-6):.4f}")

# Thresholding each sample and thresholding the mean are different things:
# the mean averages out the per-sample noise before the decision.
single = [f1_iou((s <= 3e-3).astype(np.uint8), gt).iou for s in ens.samples]
print(f"single-sample IoU {np.mean(single):.3f}, MMSE IoU {f1_iou(ens.mmse_mask, gt).iou:.3f}")

rep = uncertainty_maps(ens, gt, gt_sdf, band=3)
print(f"mean std in the 3 px boundary band {rep.band_mean_std:.4f}, elsewhere {rep.far_mean_std:.4f}")
print(f"rank correlation of std with |mean - gt| {rep.rank_correlation:+.3f}")
print(f"{int(rep.xor.sum())} pixels disagree with the ground truth after MMSE thresholding")
