"""Synthetic data, Adam and the DSM training loop."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import ndtr

from . import fileio
from .errors import ConfigError, FileFormatError, NonFiniteError
from .score_model import ScoreModel, dsm_loss, draw_training_noise, load_checkpoint, save_checkpoint
from .sde import SigmaSchedule, make_rng
from .sdf import SdfConfig, encode_sdf, validate_mask

log = logging.getLogger(__name__)

TARGET_MODES = ("sdf", "binary")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    total_steps: int = 20000
    seed: int = 0
    target_mode: str = "sdf"
    delta: float = 5.0
    sigma_min: float = 1e-3
    sigma_max: float = 5.0
    checkpoint_every: int = 1000

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        if self.target_mode not in TARGET_MODES:
            raise ConfigError(f"target_mode must be one of {TARGET_MODES}, got {self.target_mode!r}")
        if not 0 <= self.adam_beta1 < 1 or not 0 <= self.adam_beta2 < 1 or not self.adam_eps > 0:
            raise ConfigError("invalid Adam coefficients")
        self.schedule  # validates sigma bounds

    @property
    def schedule(self) -> SigmaSchedule:
        return SigmaSchedule(self.sigma_min, self.sigma_max)


# -- synthetic data ----------------------------------------------------------


@dataclass(frozen=True)
class ShapeParams:
    min_count: int = 1
    max_count: int = 4
    min_radius: float = 2.5
    max_radius: float | None = None  # defaults to grid / 4


@dataclass
class SyntheticSample:
    mask: np.ndarray
    sdf: np.ndarray
    image: np.ndarray
    seed: int


def _rasterize_ellipses(grid: int, sp: ShapeParams, max_r: float, rng) -> np.ndarray:
    yy, xx = np.mgrid[0:grid, 0:grid].astype(np.float64)
    mask = np.zeros((grid, grid), dtype=bool)
    for _ in range(int(rng.integers(sp.min_count, sp.max_count + 1))):
        a, b = rng.uniform(sp.min_radius, max_r, size=2)
        cy, cx = rng.uniform(sp.min_radius, grid - 1 - sp.min_radius, size=2)
        th = rng.uniform(0.0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(th) + dy * np.sin(th)
        v = -dx * np.sin(th) + dy * np.cos(th)
        mask |= (u / a) ** 2 + (v / b) ** 2 <= 1.0
    return mask.astype(np.uint8)


def synthesize_sample(seed: int, grid: int, shape_params: ShapeParams, delta: float) -> SyntheticSample:
    """One mask/image pair, fully determined by ``seed``."""
    rng = make_rng(seed)
    max_r = shape_params.max_radius if shape_params.max_radius is not None else grid / 4
    mask = _rasterize_ellipses(grid, shape_params, max_r, rng)
    noise = gaussian_filter(rng.standard_normal((grid, grid)), sigma=1.0, mode="wrap")
    noise = ndtr(noise / noise.std())  # uniform marginals on [0, 1]
    ang = rng.uniform(0.0, 2 * np.pi)
    yy, xx = np.mgrid[0:grid, 0:grid] / max(grid - 1, 1)
    ramp = np.cos(ang) * xx + np.sin(ang) * yy
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-12)
    image = np.clip(0.7 * mask + 0.2 * noise + 0.1 * ramp, 0.0, 1.0)
    # quantize so the 8-bit PGM round trip is lossless
    image = np.round(image * 255.0) / 255.0
    return SyntheticSample(mask, encode_sdf(mask, SdfConfig(delta)), image, int(seed))


def generate_synthetic(n: int, grid: int, shape_params: ShapeParams | None, rng, delta: float = 5.0):
    """``n`` random ellipse scenes on a ``grid`` x ``grid`` lattice.

    Each scene has 1-4 filled ellipses (per ``shape_params``); the image is
    ``0.7 * mask + 0.2 * smoothed noise + 0.1 * linear ramp``.
    """
    sp = shape_params or ShapeParams()
    if not 16 <= grid <= 128:
        raise ConfigError(f"grid must be in [16, 128], got {grid}")
    max_r = sp.max_radius if sp.max_radius is not None else grid / 4
    if not (1 <= sp.min_count <= sp.max_count):
        raise ConfigError("need 1 <= min_count <= max_count")
    if not (0 < sp.min_radius <= max_r) or max_r > grid / 2 or 2 * sp.min_radius + 1 >= grid:
        raise ConfigError(f"radii ({sp.min_radius}, {max_r}) do not fit a {grid}x{grid} grid")
    seeds = rng.integers(0, 2**63, size=n) if n else []
    return [synthesize_sample(int(s), grid, sp, delta) for s in seeds]


def write_dataset(directory, samples, delta: float, extra: dict | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(samples):
        fileio.write_pgm(d / f"sample_{i:05d}.mask.pgm", s.mask, binary_mask=True)
        fileio.write_pgm(d / f"sample_{i:05d}.img.pgm", s.image)
        fileio.write_sdf(d / f"sample_{i:05d}.sdf.bin", s.sdf, delta)
    manifest = {"count": len(samples), "delta": delta, "seeds": [s.seed for s in samples]}
    manifest.update(extra or {})
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_dataset(directory) -> list[SyntheticSample]:
    """Load a dataset directory; SDFs are recomputed from the masks at full precision."""
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    out = []
    for i in range(manifest["count"]):
        mask = validate_mask(fileio.read_pgm(d / f"sample_{i:05d}.mask.pgm", binary_mask=True))
        image = fileio.read_pgm(d / f"sample_{i:05d}.img.pgm")
        stored, delta = fileio.read_sdf(d / f"sample_{i:05d}.sdf.bin")
        sdf = encode_sdf(mask, SdfConfig(delta))
        if stored.shape != sdf.shape or np.max(np.abs(stored - sdf)) > 1e-6:
            raise FileFormatError(f"{d}: sample {i} SDF file disagrees with its mask")
        seeds = manifest.get("seeds") or [0] * manifest["count"]
        out.append(SyntheticSample(mask, sdf, image, int(seeds[i])))
    return out


# -- Adam --------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grads, state: AdamState, cfg: TrainConfig):
    """Bias-corrected Adam update; returns new ``(params, state)`` without mutating inputs."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("params, grads and optimizer state must have matching lengths")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteError("non-finite gradient")
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    t = state.step + 1
    m = b1 * state.m + (1.0 - b1) * grads
    v = b2 * state.v + (1.0 - b2) * grads * grads
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    new = params - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return new, AdamState(m, v, t)


# -- training loop -----------------------------------------------------------


def training_target(sample: SyntheticSample, target_mode: str) -> np.ndarray:
    """Clean field the diffusion runs on: the SDF, or the mask mapped to -1 (object) / +1."""
    if target_mode == "sdf":
        return sample.sdf
    if target_mode == "binary":
        return 1.0 - 2.0 * sample.mask.astype(np.float64)
    raise ConfigError(f"unknown target_mode {target_mode!r}")


def make_batch(dataset, cfg: TrainConfig, rng):
    """Random minibatch with independent horizontal/vertical flips per item."""
    idx = rng.choice(len(dataset), size=cfg.batch_size, replace=cfg.batch_size > len(dataset))
    flips = rng.integers(0, 2, size=(cfg.batch_size, 2))
    m0, x = [], []
    for i, (fv, fh) in zip(idx, flips):
        t = training_target(dataset[i], cfg.target_mode)
        im = dataset[i].image
        if fv:
            t, im = t[::-1], im[::-1]
        if fh:
            t, im = t[:, ::-1], im[:, ::-1]
        m0.append(t)
        x.append(im)
    return np.stack(m0), np.stack(x)


@dataclass
class TrainResult:
    model: ScoreModel
    losses: list[float]
    adam: AdamState = field(repr=False)


def _write_trace(path: Path, losses) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, loss in enumerate(losses):
            w.writerow([i + 1, repr(float(loss))])


def read_trace(path) -> list[float]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [float(r["loss"]) for r in rows]


def _latest_checkpoint(ckpt_dir: Path):
    found = sorted(ckpt_dir.glob("step_*.ckpt"))
    return found[-1] if found else None


def train(dataset, cfg: TrainConfig, model: ScoreModel, checkpoint_dir=None, resume: bool = True) -> TrainResult:
    """Minimize the weighted DSM loss for ``cfg.total_steps`` Adam steps.

    Randomness for step ``k`` comes from its own stream ``(cfg.seed, k)``, so a
    run resumed from any checkpoint reproduces the uninterrupted run bit for bit.
    With ``checkpoint_dir`` set, checkpoints and the loss trace are written every
    ``cfg.checkpoint_every`` steps and at the end (``final.ckpt``, ``losses.csv``).
    """
    if not dataset:
        raise ValueError("dataset is empty")
    h, w = dataset[0].mask.shape
    if h % 2 or w % 2:
        raise ConfigError(f"grid must have even size for the network, got {h}x{w}")
    if (model.arch.sigma_min, model.arch.sigma_max) != (cfg.sigma_min, cfg.sigma_max):
        raise ConfigError("model sigma range differs from training config")
    sched = cfg.schedule
    model = model.copy()
    adam = AdamState.zeros(model.arch.n_params)
    losses: list[float] = []

    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        latest = _latest_checkpoint(ckpt_dir) if resume else None
        if latest is not None:
            model, adam = load_checkpoint(latest)
            losses = read_trace(ckpt_dir / "losses.csv")[: adam.step]
            log.info("resuming from %s at step %d", latest.name, adam.step)

    for step in range(adam.step, cfg.total_steps):
        rng = make_rng(cfg.seed, 1, step)
        m0, x = make_batch(dataset, cfg, rng)
        sigma, z = draw_training_noise(rng, sched, m0.shape)
        try:
            loss, grad = dsm_loss(model, m0, x, sigma, z)
            theta, adam = adam_step(model.theta, grad, adam, cfg)
        except NonFiniteError as exc:
            raise NonFiniteError(f"training diverged at step {step + 1}: {exc}", index=step + 1) from exc
        model = ScoreModel(model.arch, theta)
        losses.append(loss)
        done = step + 1
        if done % 100 == 0:
            log.info("step %d loss %.4f (median of last 100: %.4f)", done, loss, float(np.median(losses[-100:])))
        if ckpt_dir is not None and (done % cfg.checkpoint_every == 0 or done == cfg.total_steps):
            save_checkpoint(ckpt_dir / f"step_{done:07d}.ckpt", model, adam)
            _write_trace(ckpt_dir / "losses.csv", losses)
    if ckpt_dir is not None:
        save_checkpoint(ckpt_dir / "final.ckpt", model, adam)
        _write_trace(ckpt_dir / "losses.csv", losses)
        (ckpt_dir / "train_config.json").write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n")
    return TrainResult(model, losses, adam)


def median_tail_loss(losses, tail: int = 1000) -> float:
    return float(np.median(losses[-tail:])) if losses else math.nan
