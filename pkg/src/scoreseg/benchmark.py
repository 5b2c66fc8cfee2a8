"""Desk-scale end-to-end benchmark on synthetic ellipse scenes.

Generates a train/test split, trains one model per target mode ("sdf" and the
"binary" ablation), samples an ensemble for every test image and scores it.
All stages write their outputs under a work directory keyed by the config
hash and pick up where they stopped, so an interrupted run can be resumed
and a finished one re-read without recomputation::

    python -m scoreseg.benchmark --workdir .benchmark
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .metrics import MetricReport, f1_iou, uncertainty_maps
from .sampler import SampleEnsemble, SamplerConfig, ensemble_sample, model_score_fn
from .score_model import Architecture, ScoreModel, load_checkpoint
from .sde import make_rng
from .sdf import decode_mask
from .training import TrainConfig, generate_synthetic, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BenchmarkConfig:
    n_train: int = 500
    n_test: int = 50
    grid: int = 32
    delta: float = 5.0
    data_seed: int = 2023
    init_seed: int = 11
    sample_seed: int = 7
    band: float = 3.0
    train: TrainConfig = field(default_factory=lambda: TrainConfig(total_steps=20000, batch_size=8, seed=1))
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(K=200, J=1, r=0.15, ensemble_R=16))

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def train_config(self, mode: str) -> TrainConfig:
        return replace(self.train, target_mode=mode, delta=self.delta)


def default_workdir() -> Path:
    return Path(os.environ.get("SCORESEG_BENCH_DIR", ".benchmark"))


def run_dir(cfg: BenchmarkConfig, workdir=None) -> Path:
    d = Path(workdir or default_workdir()) / cfg.digest()
    d.mkdir(parents=True, exist_ok=True)
    cfg_path = d / "config.json"
    if not cfg_path.exists():
        cfg_path.write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n")
    return d


def benchmark_data(cfg: BenchmarkConfig):
    train_set = generate_synthetic(cfg.n_train, cfg.grid, None, make_rng(cfg.data_seed, 0), cfg.delta)
    test_set = generate_synthetic(cfg.n_test, cfg.grid, None, make_rng(cfg.data_seed, 1), cfg.delta)
    return train_set, test_set


def initial_model(cfg: BenchmarkConfig) -> ScoreModel:
    arch = Architecture(sigma_min=cfg.train.sigma_min, sigma_max=cfg.train.sigma_max)
    return ScoreModel.init(arch, make_rng(cfg.init_seed))


def trained_model(cfg: BenchmarkConfig, mode: str, workdir=None, train_set=None) -> ScoreModel:
    ckpt_dir = run_dir(cfg, workdir) / mode / "checkpoints"
    final = ckpt_dir / "final.ckpt"
    if final.exists():
        return load_checkpoint(final)[0]
    if train_set is None:
        train_set, _ = benchmark_data(cfg)
    t0 = time.perf_counter()
    res = train(train_set, cfg.train_config(mode), initial_model(cfg), checkpoint_dir=ckpt_dir)
    log.info("%s model trained in %.0f s", mode, time.perf_counter() - t0)
    return res.model


def ensemble_path(cfg, mode, index, workdir=None) -> Path:
    return run_dir(cfg, workdir) / mode / "ensembles" / f"image_{index:03d}.npz"


def image_ensemble(cfg: BenchmarkConfig, model: ScoreModel, image, index: int) -> SampleEnsemble:
    """Ensemble for test image ``index``; chain j uses stream (sample_seed, index, j)."""
    sched = cfg.train.schedule
    return ensemble_sample(model_score_fn(model), image, sched, cfg.sampler, seed=(cfg.sample_seed, index))


def _save_ensemble(path: Path, ens: SampleEnsemble) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, samples=ens.samples, zero_score_events=ens.zero_score_events)
    tmp.replace(path)


def _load_ensemble(path: Path, tau: float) -> SampleEnsemble:
    with np.load(path) as z:
        samples = z["samples"]
        events = int(z["zero_score_events"])
    mean = samples.mean(axis=0)
    return SampleEnsemble(samples, mean, samples.std(axis=0), decode_mask(mean, tau), tau, events)


def heldout_ensembles(cfg: BenchmarkConfig, mode: str, workdir=None, model=None, test_set=None):
    if test_set is None:
        _, test_set = benchmark_data(cfg)
    out = []
    for i, s in enumerate(test_set):
        path = ensemble_path(cfg, mode, i, workdir)
        if not path.exists():
            if model is None:
                model = trained_model(cfg, mode, workdir)
            t0 = time.perf_counter()
            _save_ensemble(path, image_ensemble(cfg, model, s.image, i))
            log.info("%s: sampled test image %d in %.1f s", mode, i, time.perf_counter() - t0)
        out.append(_load_ensemble(path, cfg.sampler.threshold_tau))
    return out


@dataclass
class ModeResult:
    mmse: MetricReport
    single: MetricReport
    band_mean_std: list
    far_mean_std: list
    rank_correlation: list

    def summary(self) -> dict:
        band = np.array(self.band_mean_std)
        far = np.array(self.far_mean_std)
        return {
            "mmse_mean_iou": self.mmse.mean_iou,
            "mmse_mean_f1": self.mmse.mean_f1,
            "single_mean_iou": self.single.mean_iou,
            "single_mean_f1": self.single.mean_f1,
            "band_gt_far_fraction": float(np.mean(band > far)),
            "mean_rank_correlation": float(np.nanmean(self.rank_correlation)),
            "averaging": "per-image then mean",
        }


def evaluate_mode(cfg: BenchmarkConfig, mode: str, workdir=None) -> ModeResult:
    _, test_set = benchmark_data(cfg)
    ensembles = heldout_ensembles(cfg, mode, workdir, test_set=test_set)
    res = ModeResult(MetricReport(), MetricReport(), [], [], [])
    for i, (s, ens) in enumerate(zip(test_set, ensembles)):
        res.mmse.add(i, f1_iou(ens.mmse_mask, s.mask))
        res.single.add(i, f1_iou(decode_mask(ens.samples[0], cfg.sampler.threshold_tau), s.mask))
        u = uncertainty_maps(ens, s.mask, s.sdf, cfg.band)
        res.band_mean_std.append(u.band_mean_std)
        res.far_mean_std.append(u.far_mean_std)
        res.rank_correlation.append(u.rank_correlation)
    d = run_dir(cfg, workdir) / mode
    with open(d / "metrics.csv", "w") as fh:
        fh.write("image_id,f1,iou,single_f1,single_iou\n")
        for k in range(len(res.mmse.f1)):
            fh.write(f"{k},{res.mmse.f1[k]!r},{res.mmse.iou[k]!r},{res.single.f1[k]!r},{res.single.iou[k]!r}\n")
    (d / "report.json").write_text(json.dumps(res.summary(), indent=2, sort_keys=True) + "\n")
    return res


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", default=None)
    ap.add_argument("--modes", nargs="+", default=["sdf", "binary"])
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    cfg = BenchmarkConfig()
    log.info("run directory %s", run_dir(cfg, args.workdir))
    train_set, test_set = benchmark_data(cfg)
    for mode in args.modes:
        model = trained_model(cfg, mode, args.workdir, train_set=train_set)
        heldout_ensembles(cfg, mode, args.workdir, model=model, test_set=test_set)
        print(mode, json.dumps(evaluate_mode(cfg, mode, args.workdir).summary(), sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
