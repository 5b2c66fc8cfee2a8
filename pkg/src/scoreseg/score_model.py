"""Conditional noise-predicting score network and the denoising score matching loss.

The network sees ``concat(m_t * c_in(sigma), x)`` and predicts the unit noise
``z_hat`` that produced ``m_t``; the score is ``-z_hat / sigma``. Layout::

    conv_in(2 -> c1) -> res1 -> FiLM1 ------------------------------.  (skip)
                                  |                                  |
                        down(stride 2, c1 -> c2) -> res2 -> FiLM2    |
                                                           |         |
                                  upsample x2 -> concat <----------'
                                  -> up(c2 + c1 -> c1) -> res3 -> FiLM3 -> conv_out(c1 -> 1)

Each ``res`` block is ``h + conv(silu(conv(silu(h))))``. FiLM scales and
shifts come from a two-layer dense head over Fourier features of log sigma.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .errors import NonFiniteError
from .sde import SigmaSchedule, dsm_target, perturb, sigma_at

__all__ = [
    "Architecture",
    "ScoreModel",
    "apply",
    "dsm_loss",
    "loss_and_gradients",
    "draw_training_noise",
    "AnalyticGaussianScore",
    "analytic_score",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class Architecture:
    c1: int = 32
    c2: int = 64
    n_freq: int = 16
    emb_hidden: int = 64
    sigma_min: float = 1e-3
    sigma_max: float = 5.0

    def to_text(self) -> str:
        return (
            f"scorenet-v1 c1={self.c1} c2={self.c2} n_freq={self.n_freq} "
            f"emb_hidden={self.emb_hidden} sigma_min={self.sigma_min!r} sigma_max={self.sigma_max!r}"
        )

    @classmethod
    def from_text(cls, text: str) -> "Architecture":
        head, *items = text.split()
        if head != "scorenet-v1":
            raise ValueError(f"unknown architecture {head!r}")
        kv = dict(item.split("=", 1) for item in items)
        return cls(
            c1=int(kv["c1"]),
            c2=int(kv["c2"]),
            n_freq=int(kv["n_freq"]),
            emb_hidden=int(kv["emb_hidden"]),
            sigma_min=float(kv["sigma_min"]),
            sigma_max=float(kv["sigma_max"]),
        )

    @property
    def frequencies(self) -> np.ndarray:
        # geometric, in cycles over the normalized log-sigma range [0, 1]
        return np.geomspace(0.25, 16.0, self.n_freq)

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        c1, c2, E = self.c1, self.c2, self.emb_hidden
        n_film = 2 * (c1 + c2 + c1)
        shapes = [
            ("emb1.w", (2 * self.n_freq, E)),
            ("emb1.b", (E,)),
            ("emb2.w", (E, n_film)),
            ("emb2.b", (n_film,)),
            ("conv_in.w", (3, 3, 2, c1)),
            ("conv_in.b", (c1,)),
        ]
        shapes += _res_shapes("res1", c1)
        shapes += [("down.w", (3, 3, c1, c2)), ("down.b", (c2,))]
        shapes += _res_shapes("res2", c2)
        shapes += [("up.w", (3, 3, c2 + c1, c1)), ("up.b", (c1,))]
        shapes += _res_shapes("res3", c1)
        shapes += [("out.w", (3, 3, c1, 1)), ("out.b", (1,))]
        return shapes

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.layer_shapes())


def _res_shapes(name, c):
    return [
        (f"{name}.a.w", (3, 3, c, c)),
        (f"{name}.a.b", (c,)),
        (f"{name}.b.w", (3, 3, c, c)),
        (f"{name}.b.b", (c,)),
    ]


def _views(flat: np.ndarray, arch: Architecture) -> dict[str, np.ndarray]:
    out, off = {}, 0
    for name, shape in arch.layer_shapes():
        n = int(np.prod(shape))
        out[name] = flat[off : off + n].reshape(shape)
        off += n
    return out


@dataclass
class ScoreModel:
    """Flat parameter vector plus the architecture that gives it shape."""

    arch: Architecture
    theta: np.ndarray
    _params: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.theta = np.ascontiguousarray(self.theta)
        if self.theta.shape != (self.arch.n_params,):
            raise ValueError(
                f"parameter count {self.theta.size} does not match architecture ({self.arch.n_params})"
            )
        if not np.all(np.isfinite(self.theta)):
            raise NonFiniteError("model parameters contain non-finite values")
        self._params = _views(self.theta, self.arch)

    @classmethod
    def init(cls, arch: Architecture, rng: np.random.Generator, zero_head: bool = True) -> "ScoreModel":
        theta = np.zeros(arch.n_params)
        model = cls(arch, theta)
        for name, shape in arch.layer_shapes():
            if name.endswith(".b"):
                continue
            if name == "out.w" and zero_head:
                continue
            fan_in = int(np.prod(shape[:-1]))
            std = 1.0 / np.sqrt(fan_in)
            if name == "emb2.w":
                std *= 0.1  # FiLM starts close to identity
            model._params[name][...] = rng.normal(0.0, std, size=shape)
        return model

    @property
    def params(self) -> dict[str, np.ndarray]:
        return self._params

    def copy(self) -> "ScoreModel":
        return ScoreModel(self.arch, self.theta.copy())

    def astype(self, dtype) -> "ScoreModel":
        return ScoreModel(self.arch, self.theta.astype(dtype))

    # -- forward / backward ----------------------------------------------------

    def _embed(self, sigma):
        a = self.arch
        u = (np.log(sigma) - np.log(a.sigma_min)) / (np.log(a.sigma_max) - np.log(a.sigma_min))
        ang = np.pi * u[:, None] * a.frequencies[None, :]
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)

    def forward(self, mt, x, sigma):
        """Batched forward pass.

        ``mt``, ``x``: (B, H, W); ``sigma``: (B,). Returns ``(score, cache)``.
        """
        p = self._params
        dt = self.theta.dtype
        c1, c2 = self.arch.c1, self.arch.c2
        sigma = np.asarray(sigma, dtype=np.float64)
        c_in = 1.0 / np.sqrt(1.0 + sigma**2)

        feats = self._embed(sigma).astype(dt)
        e_pre = feats @ p["emb1.w"] + p["emb1.b"]
        e, e_s = nn.silu(e_pre)
        fl = e @ p["emb2.w"] + p["emb2.b"]
        g1, b1 = fl[:, :c1], fl[:, c1 : 2 * c1]
        o = 2 * c1
        g2, b2 = fl[:, o : o + c2], fl[:, o + c2 : o + 2 * c2]
        o += 2 * c2
        g3, b3 = fl[:, o : o + c1], fl[:, o + c1 : o + 2 * c1]

        inp = np.stack([mt * c_in[:, None, None], x], axis=-1).astype(dt)
        h0, xp_in = nn.conv3x3(inp, p["conv_in.w"], p["conv_in.b"])
        r1, res1 = self._res_forward("res1", h0)
        h1 = nn.film(r1, g1, b1)
        dpre, xp_down = nn.conv3x3(h1, p["down.w"], p["down.b"], stride=2)
        d, d_s = nn.silu(dpre)
        r2, res2 = self._res_forward("res2", d)
        h2 = nn.film(r2, g2, b2)
        cat = np.concatenate([nn.upsample2(h2), h1], axis=-1)
        h3, xp_up = nn.conv3x3(cat, p["up.w"], p["up.b"])
        r3, res3 = self._res_forward("res3", h3)
        h4 = nn.film(r3, g3, b3)
        a4, a4_s = nn.silu(h4)
        zhat, xp_out = nn.conv3x3(a4, p["out.w"], p["out.b"])
        zhat = zhat[..., 0]
        score = -zhat / sigma[:, None, None].astype(dt)
        cache = dict(
            sigma=sigma, feats=feats, e_pre=e_pre, e=e, e_s=e_s,
            g1=g1, g2=g2, g3=g3, xp_in=xp_in, res1=res1, r1=r1, xp_down=xp_down,
            dpre=dpre, d_s=d_s, res2=res2, r2=r2, xp_up=xp_up, res3=res3, r3=r3,
            h4=h4, a4_s=a4_s, xp_out=xp_out,
        )
        return score, cache

    def _res_forward(self, name, h):
        p = self._params
        a1, s1 = nn.silu(h)
        y1, xp_a = nn.conv3x3(a1, p[f"{name}.a.w"], p[f"{name}.a.b"])
        a2, s2 = nn.silu(y1)
        y2, xp_b = nn.conv3x3(a2, p[f"{name}.b.w"], p[f"{name}.b.b"])
        return h + y2, (h, s1, xp_a, y1, s2, xp_b)

    def _res_backward(self, name, dout, cache, grads):
        p = self._params
        h, s1, xp_a, y1, s2, xp_b = cache
        da2, grads[f"{name}.b.w"][...], grads[f"{name}.b.b"][...] = nn.conv3x3_backward(
            dout, xp_b, p[f"{name}.b.w"]
        )
        dy1 = nn.silu_backward(da2, y1, s2)
        da1, grads[f"{name}.a.w"][...], grads[f"{name}.a.b"][...] = nn.conv3x3_backward(
            dy1, xp_a, p[f"{name}.a.w"]
        )
        return dout + nn.silu_backward(da1, h, s1)

    def backward(self, cache, dscore) -> np.ndarray:
        """Gradient of a scalar loss w.r.t. ``theta`` given ``dloss/dscore``."""
        p = self._params
        flat = np.zeros(self.arch.n_params, dtype=self.theta.dtype)
        grads = _views(flat, self.arch)
        sigma = cache["sigma"]

        dzhat = (-dscore / sigma[:, None, None])[..., None].astype(self.theta.dtype)
        da4, grads["out.w"][...], grads["out.b"][...] = nn.conv3x3_backward(
            dzhat, cache["xp_out"], p["out.w"]
        )
        dh4 = nn.silu_backward(da4, cache["h4"], cache["a4_s"])
        dr3, dg3, db3 = nn.film_backward(dh4, cache["r3"], cache["g3"])
        dh3 = self._res_backward("res3", dr3, cache["res3"], grads)
        dcat, grads["up.w"][...], grads["up.b"][...] = nn.conv3x3_backward(
            dh3, cache["xp_up"], p["up.w"]
        )
        dh2 = nn.upsample2_backward(dcat[..., : self.arch.c2])
        dh1 = dcat[..., self.arch.c2 :].copy()
        dr2, dg2, db2 = nn.film_backward(dh2, cache["r2"], cache["g2"])
        dd = self._res_backward("res2", dr2, cache["res2"], grads)
        ddpre = nn.silu_backward(dd, cache["dpre"], cache["d_s"])
        dh1_down, grads["down.w"][...], grads["down.b"][...] = nn.conv3x3_backward(
            ddpre, cache["xp_down"], p["down.w"], stride=2
        )
        dh1 += dh1_down
        dr1, dg1, db1 = nn.film_backward(dh1, cache["r1"], cache["g1"])
        dh0 = self._res_backward("res1", dr1, cache["res1"], grads)
        _, grads["conv_in.w"][...], grads["conv_in.b"][...] = nn.conv3x3_backward(
            dh0, cache["xp_in"], p["conv_in.w"], need_dx=False
        )

        dfl = np.concatenate([dg1, db1, dg2, db2, dg3, db3], axis=1)
        grads["emb2.w"][...] = cache["e"].T @ dfl
        grads["emb2.b"][...] = dfl.sum(axis=0)
        de = dfl @ p["emb2.w"].T
        de_pre = nn.silu_backward(de, cache["e_pre"], cache["e_s"])
        grads["emb1.w"][...] = cache["feats"].T @ de_pre
        grads["emb1.b"][...] = de_pre.sum(axis=0)
        return flat


def _as_batch(mt, x, sigma):
    mt = np.asarray(mt)
    single = mt.ndim == 2
    if single:
        mt = mt[None]
    if mt.ndim != 3:
        raise ValueError(f"expected (H, W) or (B, H, W) field, got shape {mt.shape}")
    x = np.asarray(x)
    if x.ndim == 2:
        x = np.broadcast_to(x, mt.shape)
    if x.shape != mt.shape:
        raise ValueError(f"shape mismatch: field {mt.shape} vs image {x.shape}")
    s = np.asarray(sigma, dtype=np.float64)
    s = np.full(mt.shape[0], float(s)) if s.ndim == 0 else s
    if s.shape != (mt.shape[0],):
        raise ValueError(f"sigma must be scalar or one value per item, got shape {s.shape}")
    return mt, x, s, single


def apply(model, mt, x, sigma):
    """Score estimate s(mt, x, sigma). Accepts a single (H, W) field or a (B, H, W) batch."""
    mt, x, s, single = _as_batch(mt, x, sigma)
    if not (np.all(np.isfinite(mt)) and np.all(np.isfinite(x)) and np.all(np.isfinite(s))):
        raise NonFiniteError("non-finite input to score model")
    score, _ = model.forward(mt, x, s)
    return score[0] if single else score


def draw_training_noise(rng: np.random.Generator, sched: SigmaSchedule, shape):
    """Per-item noise level and Gaussian field for one DSM minibatch; returns ``(sigma, z)``."""
    t = rng.uniform(0.0, sched.horizon_T, size=shape[0])
    z = rng.standard_normal(shape)
    return sigma_at(sched, t), z


def dsm_loss(model, m0, x, sigma, z, need_grad=True):
    """Weighted DSM loss for fixed noise; returns ``(loss, grad or None)``."""
    mt = perturb(m0, sigma, z)
    score, cache = model.forward(mt, x, sigma)
    target = dsm_target(mt, m0, sigma)
    s2 = (sigma**2)[:, None, None]
    resid = score - target
    per_item = (s2 * resid**2).mean(axis=(1, 2))
    if not np.all(np.isfinite(per_item)):
        bad = int(np.flatnonzero(~np.isfinite(per_item))[0])
        raise NonFiniteError(f"non-finite DSM loss at batch item {bad}", index=bad)
    loss = float(per_item.mean())
    if not need_grad:
        return loss, None
    dscore = 2.0 * s2 * resid / resid.size
    return loss, model.backward(cache, dscore)


def loss_and_gradients(model, batch, sched: SigmaSchedule, rng: np.random.Generator):
    """Sample t and z, then evaluate the DSM loss and its exact parameter gradient.

    ``batch`` is ``(m0, x)`` with both arrays shaped (B, H, W).
    """
    m0, x = batch
    m0 = np.asarray(m0, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if m0.ndim != 3 or m0.shape[0] < 1:
        raise ValueError(f"batch must be a non-empty (B, H, W) stack, got {m0.shape}")
    if x.shape != m0.shape:
        raise ValueError(f"shape mismatch: targets {m0.shape} vs images {x.shape}")
    sigma, z = draw_training_noise(rng, sched, m0.shape)
    return dsm_loss(model, m0, x, sigma, z)


@dataclass(frozen=True)
class AnalyticGaussianScore:
    """Closed-form score of N(mu, s2 I) smoothed by N(0, sigma^2 I)."""

    mu: np.ndarray
    s2: float

    def __post_init__(self):
        if not self.s2 > 0:
            raise ValueError(f"s2 must be > 0, got {self.s2}")

    def __call__(self, mt, x, sigma):
        return analytic_score(self, mt, sigma)


def analytic_score(oracle: AnalyticGaussianScore, mt, sigma):
    s = np.asarray(sigma, dtype=np.float64)
    mt = np.asarray(mt)
    if s.ndim:
        s = s.reshape(s.shape + (1,) * (mt.ndim - s.ndim))
    return -(mt - oracle.mu) / (oracle.s2 + s**2)


# -- checkpoints -------------------------------------------------------------

_MAGIC = b"SCM1"


def save_checkpoint(path, model: ScoreModel, adam_state=None) -> None:
    """Write ``SCM1`` checkpoint: descriptor, f64 parameters, optional Adam state."""
    desc = model.arch.to_text().encode("utf-8")
    theta = model.theta.astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(desc)))
        fh.write(desc)
        fh.write(struct.pack("<Q", theta.size))
        fh.write(theta.tobytes())
        if adam_state is not None:
            fh.write(struct.pack("<Q", adam_state.step))
            fh.write(np.asarray(adam_state.m, dtype="<f8").tobytes())
            fh.write(np.asarray(adam_state.v, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(model, adam_state or None)``."""
    from .training import AdamState

    buf = Path(path).read_bytes()
    if buf[:4] != _MAGIC:
        raise ValueError(f"{path}: not an SCM1 checkpoint")
    (n_desc,) = struct.unpack_from("<I", buf, 4)
    off = 8
    arch = Architecture.from_text(buf[off : off + n_desc].decode("utf-8"))
    off += n_desc
    (n,) = struct.unpack_from("<Q", buf, off)
    off += 8
    if n != arch.n_params:
        raise ValueError(f"{path}: parameter count {n} does not match descriptor")
    theta = np.frombuffer(buf, dtype="<f8", count=n, offset=off).astype(np.float64)
    off += 8 * n
    model = ScoreModel(arch, theta)
    if off == len(buf):
        return model, None
    if len(buf) != off + 8 + 16 * n:
        raise ValueError(f"{path}: truncated optimizer state")
    (step,) = struct.unpack_from("<Q", buf, off)
    off += 8
    m = np.frombuffer(buf, dtype="<f8", count=n, offset=off).astype(np.float64)
    v = np.frombuffer(buf, dtype="<f8", count=n, offset=off + 8 * n).astype(np.float64)
    return model, AdamState(m=m, v=v, step=int(step))
