"""End-to-end helpers: synthetic corpora and training of the model bundle."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import build_schedule, train_diffusion
from .net.autoencoder import AutoencoderDet, fit_latent_scale
from .net.optim import SGD
from .net.unet import UNetLite
from .quality import ModelBundle
from .signalio import NoiseSpec, inject_noise, ingest_record, synth_clean, write_raw

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ corpora

def noisy_record(kind, snr_db, seed, hr_bpm=None, fs=500.0, dur_s=10.0, record_id=None):
    """Clean synthetic beat train plus one kind of calibrated noise."""
    rng = np.random.default_rng([seed, 7])
    hr = hr_bpm if hr_bpm is not None else rng.uniform(50, 110)
    clean = synth_clean(hr, fs, dur_s, seed, record_id=record_id or f"{kind}-{seed}")
    if kind == "burst":
        length = rng.uniform(1.0, 3.0)
        spec = NoiseSpec("burst", snr_db, burst=(rng.uniform(0.0, dur_s - length), length))
    elif kind == "baseline_drift":
        spec = NoiseSpec("baseline_drift", snr_db, drift_hz=rng.uniform(0.05, 0.45))
    else:
        spec = NoiseSpec(kind, snr_db)
    return inject_noise(clean, spec, seed + 1)


def synth_corpus(count, hr_range=(50.0, 110.0), noise_mix=None, snr_db=0.0, seed=0, fs=500.0, dur_s=10.0):
    """``count`` records: ``round(frac * count)`` of each noise kind, the rest clean.

    Returns ``(records, manifest_rows)``; ids are ``rec-0000`` style in a
    seeded shuffled order of labels.
    """
    noise_mix = noise_mix or {}
    rng = np.random.default_rng(seed)
    kinds = []
    for kind, frac in sorted(noise_mix.items()):
        kinds += [kind] * int(round(frac * count))
    if len(kinds) > count:
        raise ValueError("noise fractions exceed 1")
    kinds += ["clean"] * (count - len(kinds))
    kinds = [kinds[i] for i in rng.permutation(count)]
    seeds = rng.integers(0, 2**31 - 1, size=count)
    records, manifest = [], []
    for i, (kind, s) in enumerate(zip(kinds, seeds)):
        rid = f"rec-{i:04d}"
        s = int(s)
        hr = float(rng.uniform(*hr_range))
        if kind == "clean":
            rec = synth_clean(hr, fs, dur_s, s, record_id=rid)
            snr = ""
        else:
            rec = noisy_record(kind, snr_db, s, hr, fs, dur_s, record_id=rid)
            snr = snr_db
        records.append(rec)
        manifest.append({"id": rid, "labels": kind, "seed": s, "snr_db": snr})
    return records, manifest


def write_corpus(records, manifest, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for rec in records:
        write_raw(rec, out_dir / f"{rec.record_id}.f32le")
    with open(out_dir / "manifest.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["id", "labels", "seed", "snr_db"], lineterminator="\n")
        w.writeheader()
        w.writerows(manifest)
    return out_dir


def read_corpus(data_dir, select="all"):
    """Load records listed in ``manifest.csv``; ``select`` is 'all', 'clean' or 'noisy'."""
    data_dir = Path(data_dir)
    with open(data_dir / "manifest.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        is_clean = row["labels"] == "clean"
        if select == "clean" and not is_clean or select == "noisy" and is_clean:
            continue
        out.append(ingest_record(data_dir / f"{row['id']}.f32le"))
    return out


# ----------------------------------------------------------------- training

@dataclass
class TrainConfig:
    ae_epochs: int = 12
    ae_lr: float = 0.1
    latent_epochs: int = 30
    pixel_epochs: int = 3
    diffusion_lr: float = 0.02
    batch_size: int = 16
    momentum: float = 0.9
    clip_norm: float = 1.0
    ae_widths: tuple = (16, 32)
    unet_widths: tuple = (16, 32, 64)
    seed: int = 0
    schedule: dict = field(default_factory=lambda: {"T": 1000, "beta_1": 1e-4, "beta_T": 0.02})

    def to_dict(self):
        d = asdict(self)
        d["ae_widths"], d["unet_widths"] = list(self.ae_widths), list(self.unet_widths)
        return d


def pretrain_autoencoder(ae, data, epochs=12, lr=0.1, batch_size=16, momentum=0.9, clip_norm=1.0, seed=0):
    """Mean-squared reconstruction pretraining on clean scalograms; returns the loss trace."""
    data.require_clean()
    x = data.x.astype(ae.dtype)
    rng = np.random.default_rng(seed)
    opt = SGD(ae, lr=lr, momentum=momentum, clip_norm=clip_norm)
    trace = []
    for epoch in range(epochs):
        order = rng.permutation(len(x))
        for i in range(0, len(x), batch_size):
            xb = x[order[i:i + batch_size]]
            ae.zero_grad()
            diff = ae.forward(xb) - xb
            ae.backward(2.0 * diff / diff.size)
            opt.step()
            trace.append(float(np.mean(np.square(diff, dtype=np.float64))))
        log.info("autoencoder epoch %d: loss %.5f", epoch, trace[-1])
    fit_latent_scale(ae, x)
    return trace


def train_bundle(train, cfg=TrainConfig(), spaces=("pixel", "latent"), autoencoder=None, latent_steps=None):
    """Train the autoencoder (unless given) and the requested diffusion models.

    Returns ``(bundle, traces)`` where traces maps model name -> loss list.
    ``latent_steps`` pins the number of latent-model optimizer steps, which
    keeps retraining on a smaller refined set comparable to the baseline.
    """
    train.require_clean()
    sched = build_schedule(**cfg.schedule)
    traces = {}
    meta = {"training_seed": cfg.seed, "fingerprint": train.fingerprint(), "schedule": sched.params(),
            "train_config": cfg.to_dict(), "n_train": len(train)}
    bundle = ModelBundle(sched)
    if "latent" in spaces:
        if autoencoder is None:
            autoencoder = AutoencoderDet(widths=cfg.ae_widths, seed=cfg.seed)
            traces["autoencoder"] = pretrain_autoencoder(autoencoder, train, cfg.ae_epochs, cfg.ae_lr,
                                                         cfg.batch_size, cfg.momentum, cfg.clip_norm, cfg.seed)
            autoencoder.meta = dict(meta)
        bundle.autoencoder = autoencoder
        epochs = cfg.latent_epochs
        if latent_steps is not None:
            per_epoch = -(-len(train) // cfg.batch_size)
            epochs = -(-latent_steps // per_epoch)
        latent = UNetLite(autoencoder.latent_channels, cfg.unet_widths, cfg.seed + 1, sched.T)
        res = train_diffusion(latent, train, sched, epochs, cfg.seed + 1, autoencoder,
                              cfg.batch_size, cfg.diffusion_lr, cfg.momentum, cfg.clip_norm,
                              max_steps=latent_steps)
        latent.meta = dict(meta)
        bundle.latent, traces["latent"] = latent, res.loss_trace
    if "pixel" in spaces:
        pixel = UNetLite(1, cfg.unet_widths, cfg.seed + 2, sched.T)
        res = train_diffusion(pixel, train, sched, cfg.pixel_epochs, cfg.seed + 2, None,
                              cfg.batch_size, cfg.diffusion_lr, cfg.momentum, cfg.clip_norm)
        pixel.meta = dict(meta)
        bundle.pixel, traces["pixel"] = pixel, res.loss_trace
    return bundle, traces

