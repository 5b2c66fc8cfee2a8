"""Flat ``key = value`` run configuration shared by all CLI subcommands."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .sampler import SamplerConfig
from .sde import SigmaSchedule
from .sdf import SdfConfig
from .training import TARGET_MODES, TrainConfig


@dataclass(frozen=True)
class RunConfig:
    # seeds
    seed: int = 0
    # data
    n: int = 8
    grid: int = 32
    # SDF
    delta: float = 5.0
    threshold_tau: float = 3e-3
    # noise schedule
    sigma_min: float = 1e-3
    sigma_max: float = 5.0
    # training
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    total_steps: int = 20000
    target_mode: str = "sdf"
    checkpoint_every: int = 1000
    # sampling
    K: int = 200
    J: int = 1
    r: float = 0.15
    ensemble_R: int = 16
    # evaluation
    band: float = 3.0
    # paths
    data: str = ""
    checkpoint: str = ""
    pred: str = ""
    gt: str = ""
    out: str = ""

    def __post_init__(self):
        # constructing the component configs runs their range checks
        self.sdf_config, self.schedule, self.train_config, self.sampler_config
        if self.n < 0:
            raise ConfigError("n must be >= 0")
        if not 16 <= self.grid <= 128:
            raise ConfigError("grid must be in [16, 128]")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.band < 1:
            raise ConfigError("band must be >= 1")

    @property
    def sdf_config(self) -> SdfConfig:
        try:
            return SdfConfig(self.delta, self.threshold_tau)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def schedule(self) -> SigmaSchedule:
        return SigmaSchedule(self.sigma_min, self.sigma_max)

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
            batch_size=self.batch_size,
            total_steps=self.total_steps,
            seed=self.seed,
            target_mode=self.target_mode,
            delta=self.delta,
            sigma_min=self.sigma_min,
            sigma_max=self.sigma_max,
            checkpoint_every=self.checkpoint_every,
        )

    @property
    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(self.K, self.J, self.r, self.threshold_tau, self.ensemble_R)

    def to_text(self) -> str:
        """Canonical form: every key, in declaration order, one per line."""
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {v!r}" if isinstance(v, float) else f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]

    def require(self, *keys: str, command: str = "") -> None:
        missing = [k for k in keys if getattr(self, k) in ("", None)]
        if missing:
            raise ConfigError(f"{command or 'command'} requires {', '.join(missing)}")

    def updated(self, **overrides) -> "RunConfig":
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from exc
    if key == "target_mode" and raw not in TARGET_MODES:
        raise ConfigError(f"target_mode must be one of {TARGET_MODES}")
    return raw


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, raw)
    return replace(base or RunConfig(), **values)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not UTF-8 text") from exc
    return parse_config(text)
