"""Conditional score-based segmentation over truncated signed distance maps."""
from .metrics import f1_iou, uncertainty_maps
from .sampler import SampleEnsemble, SamplerConfig, ensemble_sample, sample
from .score_model import AnalyticGaussianScore, Architecture, ScoreModel, apply, loss_and_gradients
from .sde import SigmaSchedule, make_ladder, make_rng, sigma_at
from .sdf import SdfConfig, brute_force_sdf, decode_mask, encode_sdf
from .training import TrainConfig, generate_synthetic, train

__version__ = "0.1.0"
