"""DDPM training and DDPM/DDIM partial-diffusion reconstruction."""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass

import numpy as np

from .dataset import ScalogramSet
from .net.optim import SGD

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseSchedule:
    """Tables indexed directly by step ``t`` in 0..T (entry 0 is the identity step)."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    beta_tilde: np.ndarray
    beta_1: float = 1e-4
    beta_T: float = 0.02

    def params(self):
        return {"T": self.T, "beta_1": self.beta_1, "beta_T": self.beta_T, "kind": "linear"}


def build_schedule(T=1000, beta_1=1e-4, beta_T=0.02):
    """Linear beta schedule and its derived tables."""
    if not (0 < beta_1 <= beta_T < 1) or T < 1:
        raise ValueError(f"invalid schedule endpoints beta_1={beta_1}, beta_T={beta_T}, T={T}")
    beta = np.zeros(T + 1)
    beta[1:] = np.linspace(beta_1, beta_T, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    beta_tilde = np.zeros(T + 1)
    beta_tilde[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:]
    for a in (beta, alpha, alpha_bar, beta_tilde):
        a.setflags(write=False)
    return NoiseSchedule(T, beta, alpha, alpha_bar, beta_tilde, beta_1, beta_T)


def _bcast(v, x):
    v = np.asarray(v, dtype=np.float64)
    return v.reshape(v.shape + (1,) * (x.ndim - v.ndim)) if v.ndim else v


def _check_t(t, lo, hi):
    t = np.asarray(t)
    if t.size and (t.min() < lo or t.max() > hi):
        raise ValueError(f"step {t} outside {lo}..{hi}")
    return t


def forward_noise(x0, t, eps, sched):
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; ``t`` scalar or per-sample."""
    x0, eps = np.asarray(x0), np.asarray(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    t = _check_t(t, 0, sched.T)
    ab = sched.alpha_bar[t]
    if np.ndim(ab):
        ab = _bcast(ab, x0)
    return (np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps).astype(x0.dtype, copy=False)


def ddpm_reverse_step(model, x_t, t, sched, rng):
    """One ancestral step x_t -> x_{t-1}; ``rng`` is a Generator or list of them."""
    _check_t(t, 1, sched.T)
    eps = np.asarray(model(x_t, t), dtype=np.float64)
    a, ab, bt = sched.alpha[t], sched.alpha_bar[t], sched.beta_tilde[t]
    mean = (x_t - (1.0 - a) / np.sqrt(1.0 - ab) * eps) / np.sqrt(a)
    if bt == 0.0:
        return mean
    return mean + np.sqrt(bt) * _normal(rng, x_t.shape)


def ddim_reverse_step(model, x_t, t, t_prev, sched):
    """Deterministic (sigma = 0) jump from step ``t`` to ``t_prev``."""
    if not 0 <= t_prev < t <= sched.T:
        raise ValueError(f"need 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
    eps = np.asarray(model(x_t, t), dtype=np.float64)
    ab, ab_prev = sched.alpha_bar[t], sched.alpha_bar[t_prev]
    x0_hat = (x_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)
    return np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps


def _normal(rng, shape):
    if isinstance(rng, (list, tuple)):
        if len(rng) != shape[0]:
            raise ValueError("need one generator per batch item")
        return np.stack([g.standard_normal(shape[1:]) for g in rng])
    return rng.standard_normal(shape)


# ----------------------------------------------------------- reconstruction

SPACES = ("pixel", "latent")
SAMPLERS = ("ddpm", "ddim")


@dataclass(frozen=True)
class ReconstructionConfig:
    space: str = "latent"
    sampler: str = "ddim"
    lam: int = 30
    ddim_stride: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.space not in SPACES:
            raise ValueError(f"space must be one of {SPACES}")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}")
        if self.lam < 0 or self.ddim_stride < 1:
            raise ValueError("lambda must be >= 0 and the DDIM stride >= 1")

    @property
    def effective_lambda(self):
        if self.sampler == "ddim":
            return (self.lam // self.ddim_stride) * self.ddim_stride
        return self.lam

    def timesteps(self):
        """Reverse-pass step sequence ending at 0."""
        lam = self.effective_lambda
        if self.sampler == "ddim":
            return list(range(lam, -1, -self.ddim_stride))
        return list(range(lam, -1, -1))

    def label(self):
        return f"{self.space}/{self.sampler}/{self.lam}"

    def to_dict(self):
        return {"space": self.space, "sampler": self.sampler, "lambda": self.lam,
                "ddim_stride": self.ddim_stride, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("space", "latent"), d.get("sampler", "ddim"), int(d.get("lambda", 30)),
                   int(d.get("ddim_stride", 10)), int(d.get("seed", 0)))


def key_seed(key):
    """Stable non-negative integer for a segment id (int or str)."""
    if isinstance(key, (int, np.integer)):
        return int(key)
    return zlib.crc32(str(key).encode())


def item_rngs(seed, keys):
    return [np.random.default_rng([int(seed), key_seed(k)]) for k in keys]


def reconstruct(model, x, cfg, sched, autoencoder=None, keys=None):
    """Partial-diffusion reconstruction of a batch (N, 1, H, W) in [-1, 1].

    Noise to depth lambda with one seeded forward draw, then run the reverse
    chain back to step 0.  Each batch item draws from its own generator keyed
    by ``(cfg.seed, keys[i])``, so results do not depend on batch layout.
    """
    x = np.asarray(getattr(x, "x", x), dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None, None]
    if cfg.space == "latent" and autoencoder is None and cfg.effective_lambda > 0:
        raise ValueError("latent-space reconstruction needs an autoencoder")
    keys = list(range(len(x))) if keys is None else list(keys)
    if len(keys) != len(x):
        raise ValueError("need one key per batch item")
    lam = cfg.effective_lambda
    if lam == 0:
        out = x.copy()
    else:
        if lam > sched.T:
            raise ValueError(f"lambda {lam} exceeds T={sched.T}")
        rngs = item_rngs(cfg.seed, keys)
        z = autoencoder.encode(x).astype(np.float64) if cfg.space == "latent" else x
        h = forward_noise(z, lam, _normal(rngs, z.shape), sched)
        steps = cfg.timesteps()
        for t, t_prev in zip(steps[:-1], steps[1:]):
            if cfg.sampler == "ddim":
                h = ddim_reverse_step(model, h, t, t_prev, sched)
            else:
                h = ddpm_reverse_step(model, h, t, sched, rngs)
        out = autoencoder.decode(h).astype(np.float64) if cfg.space == "latent" else h
    out = np.clip(out, -1.0, 1.0)
    return out[0, 0] if single else out


# ----------------------------------------------------------------- training

@dataclass
class TrainResult:
    model: object
    loss_trace: list


def train_diffusion(model, data, sched, epochs=1, seed=0, autoencoder=None, batch_size=16,
                    lr=0.02, momentum=0.9, clip_norm=1.0, max_steps=None, callback=None):
    """Fit ``model`` to predict the injected noise (mean squared error per element).

    ``data`` is a :class:`ScalogramSet` of clean items.  With an autoencoder,
    inputs are encoded once by the frozen encoder and diffusion runs on latents.
    Returns the model and a per-step loss trace.
    """
    if not isinstance(data, ScalogramSet):
        raise TypeError("train_diffusion expects a ScalogramSet")
    data.require_clean()
    x = data.x
    if autoencoder is not None:
        x = np.concatenate([autoencoder.encode(x[i:i + 64]) for i in range(0, len(x), 64)])
    x = x.astype(model.dtype)
    rng = np.random.default_rng(seed)
    opt = SGD(model, lr=lr, momentum=momentum, clip_norm=clip_norm)
    trace = []
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(len(x))
        for i in range(0, len(x), batch_size):
            xb = x[order[i:i + batch_size]]
            t = rng.integers(1, sched.T + 1, size=len(xb))
            eps = rng.standard_normal(xb.shape).astype(model.dtype)
            loss = diffusion_loss_and_grad(model, xb, t, eps, sched)
            opt.step()
            trace.append(loss)
            step += 1
            if callback is not None:
                callback(step, loss)
            if max_steps is not None and step >= max_steps:
                return TrainResult(model, trace)
        log.info("epoch %d: mean loss %.4f", epoch, float(np.mean(trace[-(len(x) // batch_size or 1):])))
    return TrainResult(model, trace)


def diffusion_loss_and_grad(model, x0, t, eps, sched):
    """Forward + backward of the noise-prediction loss; gradients land in the model."""
    xt = forward_noise(x0, t, eps, sched)
    model.zero_grad()
    pred = model.forward(xt, t)
    diff = pred - eps
    model.backward(2.0 * diff / diff.size)
    return float(np.mean(np.square(diff, dtype=np.float64)))
