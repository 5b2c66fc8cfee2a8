"""Command-line interface: ``scoreseg {gen,encode,decode,corrupt,train,sample,eval}``.

Settings are merged from built-in defaults, ``--config`` and command-line
flags, in that order. Exit codes: 1 usage, 2 config, 3 IO, 4 numeric, 5 internal.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import fileio
from .config import RunConfig, load_config
from .corruption import corrupt, flip_rates
from .errors import ConfigError, FileFormatError, NonFiniteError
from .metrics import MetricReport, f1_iou, uncertainty_maps
from .sampler import SampleEnsemble, ensemble_sample, model_score_fn
from .score_model import Architecture, ScoreModel, load_checkpoint
from .sde import make_rng
from .sdf import SdfConfig, decode_mask, encode_sdf, validate_mask
from .training import generate_synthetic, read_dataset, train, write_dataset

log = logging.getLogger("scoreseg")

EXIT_USAGE, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_INTERNAL = 1, 2, 3, 4, 5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _out_dir(cfg: RunConfig, force: bool) -> Path:
    cfg.require("out", command="this command")
    d = Path(cfg.out)
    if d.exists() and any(d.iterdir()) and not force:
        raise FileExistsError(f"output directory {d} is not empty (use --force)")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _manifest(cfg: RunConfig, command: str, **extra) -> dict:
    # the output location is not part of what a run computes
    cfg = cfg.updated(out="")
    out = {"command": command, "config_hash": cfg.digest(), "seed": cfg.seed, "config": cfg.to_text()}
    out.update(extra)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- subcommands -------------------------------------------------------------


def cmd_gen(cfg: RunConfig, args) -> None:
    out = _out_dir(cfg, args.force)
    samples = generate_synthetic(cfg.n, cfg.grid, None, make_rng(cfg.seed), cfg.delta)
    write_dataset(out, samples, cfg.delta, extra={"grid": cfg.grid, **_manifest(cfg, "gen")})
    log.info("wrote %d samples to %s", len(samples), out)


def cmd_encode(cfg: RunConfig, args) -> None:
    cfg.require("out", command="encode")
    mask = validate_mask(fileio.read_pgm(args.mask, binary_mask=True))
    fileio.write_sdf(cfg.out, encode_sdf(mask, SdfConfig(cfg.delta)), cfg.delta)


def cmd_decode(cfg: RunConfig, args) -> None:
    cfg.require("out", command="decode")
    field, _ = fileio.read_sdf(args.sdf)
    fileio.write_pgm(cfg.out, decode_mask(field, cfg.threshold_tau), binary_mask=True)


def cmd_corrupt(cfg: RunConfig, args) -> None:
    cfg.require("data", command="corrupt")
    try:
        ts = [float(t) for t in args.t.split(",")]
    except ValueError as exc:
        raise ConfigError(f"cannot parse --t {args.t!r}") from exc
    if any(not 0.0 <= t <= 1.0 for t in ts):
        raise ConfigError("corruption times must lie in [0, 1]")
    samples = read_dataset(cfg.data)
    if not 0 <= args.index < len(samples):
        raise ConfigError(f"--index {args.index} out of range for {len(samples)} samples")
    sample = samples[args.index]
    out = _out_dir(cfg, args.force)
    rows = []
    for k, t in enumerate(ts):
        for mode in ("sdf", "binary"):
            rng = make_rng(cfg.seed, args.index, k, 0 if mode == "sdf" else 1)
            view = corrupt(sample, t, mode, cfg.schedule, rng, cfg.threshold_tau)
            stem = f"t{t:.3f}_{mode}"
            fileio.write_sdf(out / f"{stem}.sdf.bin", view.field, cfg.delta)
            fileio.write_pgm(out / f"{stem}.mask.pgm", view.mask, binary_mask=True)
            near, far = flip_rates(sample.mask, view.mask)
            rows.append([t, mode, float(view.mask.mean()), float(np.mean(view.mask != sample.mask)), near, far])
    with open(out / "corruption.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mode", "foreground_fraction", "mismatch_fraction", "near_flip_rate", "far_flip_rate"])
        w.writerows(rows)
    _write_json(out / "manifest.json", _manifest(cfg, "corrupt", index=args.index, t=ts))


def cmd_train(cfg: RunConfig, args) -> None:
    cfg.require("data", command="train")
    samples = read_dataset(cfg.data)
    out = _out_dir(cfg, args.force)
    arch = Architecture(sigma_min=cfg.sigma_min, sigma_max=cfg.sigma_max)
    model = ScoreModel.init(arch, make_rng(cfg.seed, 0))
    t0 = time.perf_counter()
    res = train(samples, cfg.train_config, model, checkpoint_dir=out)
    _write_json(
        out / "manifest.json",
        _manifest(cfg, "train", steps=len(res.losses), seconds=round(time.perf_counter() - t0, 3)),
    )


def _ensemble_files(d: Path, i: int):
    return d / f"sample_{i:05d}.mean.sdf.bin", d / f"sample_{i:05d}.std.sdf.bin", d / f"sample_{i:05d}.mmse.pgm"


def cmd_sample(cfg: RunConfig, args) -> None:
    cfg.require("data", "checkpoint", command="sample")
    model, _ = load_checkpoint(cfg.checkpoint)
    samples = read_dataset(cfg.data)
    out = _out_dir(cfg, args.force)
    score_fn = model_score_fn(model)
    scfg = cfg.sampler_config
    with open(out / "manifest.jsonl", "w") as manifest:
        manifest.write(json.dumps(_manifest(cfg, "sample"), sort_keys=True) + "\n")
        for i, s in enumerate(samples):
            t0 = time.perf_counter()
            ens = ensemble_sample(score_fn, s.image, cfg.schedule, scfg, seed=(cfg.seed, i))
            for j, field in enumerate(ens.samples):
                fileio.write_sdf(out / f"sample_{i:05d}.s{j:03d}.sdf.bin", field, cfg.delta)
            mean_p, std_p, mmse_p = _ensemble_files(out, i)
            fileio.write_sdf(mean_p, ens.mean, cfg.delta)
            fileio.write_sdf(std_p, ens.std, cfg.delta)
            fileio.write_pgm(mmse_p, ens.mmse_mask, binary_mask=True)
            rec = {"image": i, "seed": [cfg.seed, i], "R": scfg.ensemble_R,
                   "zero_score_events": ens.zero_score_events,
                   "seconds": round(time.perf_counter() - t0, 3)}
            manifest.write(json.dumps(rec, sort_keys=True) + "\n")
            log.info("image %d sampled in %.1f s", i, rec["seconds"])


def cmd_eval(cfg: RunConfig, args) -> None:
    cfg.require("pred", "gt", command="eval")
    gt_dir, pred_dir = Path(cfg.gt), Path(cfg.pred)
    gt_masks = sorted(gt_dir.glob("sample_*.mask.pgm"))
    if not gt_masks:
        raise FileNotFoundError(f"no ground-truth masks in {gt_dir}")
    out = _out_dir(cfg, args.force)
    report = MetricReport()
    band_stats = []
    for path in gt_masks:
        stem = path.name[: -len(".mask.pgm")]
        i = int(stem.split("_")[1])
        gt = fileio.read_pgm(path, binary_mask=True)
        pred_path = pred_dir / f"{stem}.mmse.pgm"
        if not pred_path.exists():
            pred_path = pred_dir / f"{stem}.mask.pgm"
        if not pred_path.exists():
            raise FileNotFoundError(f"no prediction for {stem} in {pred_dir}")
        pred = fileio.read_pgm(pred_path, binary_mask=True)
        report.add(stem, f1_iou(pred, gt))
        mean_p, std_p, _ = _ensemble_files(pred_dir, i)
        if mean_p.exists() and std_p.exists():
            mean, _ = fileio.read_sdf(mean_p)
            std, _ = fileio.read_sdf(std_p)
            ens = SampleEnsemble(mean[None], mean, std, pred, cfg.threshold_tau)
            u = uncertainty_maps(ens, gt, encode_sdf(gt, SdfConfig(cfg.delta)), cfg.band)
            fileio.write_sdf(out / f"{stem}.error.sdf.bin", u.error, cfg.delta)
            fileio.write_sdf(out / f"{stem}.std.sdf.bin", u.std, cfg.delta)
            fileio.write_sdf(out / f"{stem}.xor.sdf.bin", u.xor.astype(np.float64), cfg.delta)
            band_stats.append({"image_id": stem, "band_mean_std": u.band_mean_std,
                               "far_mean_std": u.far_mean_std, "rank_correlation": u.rank_correlation})
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "f1", "iou"])
        for row in zip(report.image_ids, report.f1, report.iou):
            w.writerow(row)
    _write_json(out / "report.json", {
        "mean_f1": report.mean_f1,
        "mean_iou": report.mean_iou,
        "averaging": "per-image then mean",
        "band_px": cfg.band,
        "band_statistics": band_stats,
        **_manifest(cfg, "eval"),
    })
    log.info("mean F1 %.4f, mean IoU %.4f over %d images", report.mean_f1, report.mean_iou, len(report.f1))


COMMANDS = {
    "gen": cmd_gen,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "corrupt": cmd_corrupt,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value run configuration file")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory (or file for encode/decode)")
    common.add_argument("--force", action="store_true", help="allow writing into a non-empty output directory")

    p = _Parser(prog="scoreseg", description="Score-based segmentation with signed distance maps.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--n", type=int)
    s.add_argument("--grid", type=int)
    s.add_argument("--delta", type=float)

    s = sub.add_parser("encode", parents=[common], help="mask PGM -> SDF raster")
    s.add_argument("mask")
    s.add_argument("--delta", type=float)

    s = sub.add_parser("decode", parents=[common], help="SDF raster -> mask PGM")
    s.add_argument("sdf")
    s.add_argument("--tau", type=float, dest="threshold_tau")

    s = sub.add_parser("corrupt", parents=[common], help="forward-corruption series for one sample")
    s.add_argument("--data")
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--t", default="0,0.25,0.5,0.75,1")

    s = sub.add_parser("train", parents=[common], help="train a score model")
    s.add_argument("--data")
    s.add_argument("--steps", type=int, dest="total_steps")
    s.add_argument("--batch-size", type=int, dest="batch_size")
    s.add_argument("--target-mode", choices=["sdf", "binary"], dest="target_mode")

    s = sub.add_parser("sample", parents=[common], help="ensemble-sample every image of a dataset")
    s.add_argument("--data")
    s.add_argument("--checkpoint")
    s.add_argument("--R", type=int, dest="ensemble_R")
    s.add_argument("--K", type=int)
    s.add_argument("--J", type=int)
    s.add_argument("--r", type=float)

    s = sub.add_parser("eval", parents=[common], help="F1/IoU and uncertainty statistics")
    s.add_argument("--pred")
    s.add_argument("--gt")
    s.add_argument("--band", type=float)
    return p


_NON_CONFIG = {"command", "config", "force", "mask", "sdf", "index", "t"}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config) if args.config else RunConfig()
        overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
        cfg = cfg.updated(**overrides)
        COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FileFormatError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
