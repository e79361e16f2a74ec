"""Command-line interface: ``ecgq <subcommand> ...``.

Precedence for every setting: command-line flag > ``--config`` JSON file >
built-in default.  The global seed falls back to ``$ECGQ_SEED`` and then 0.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .aslt import AsltConfig, aslt_scalogram, resize_area, to_model_input, write_scalogram
from .dataset import ScalogramSet
from .diffusion import ReconstructionConfig
from .net.checkpoint import load_checkpoint, save_checkpoint
from .signalio import NOISE_KINDS, ingest_record, resample, segment, write_raw

log = logging.getLogger("ecgq")
SCHEMA_VERSION = 1


class UsageError(Exception):
    pass


# ----------------------------------------------------------------- config

@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    paths: dict = field(default_factory=lambda: {"data_dir": "data", "checkpoint_dir": "checkpoints",
                                                 "report_dir": "reports"})
    aslt: dict = field(default_factory=lambda: asdict(AsltConfig()))
    schedule: dict = field(default_factory=lambda: {"T": 1000, "beta_1": 1e-4, "beta_T": 0.02})
    reconstruction: dict = field(default_factory=lambda: ReconstructionConfig().to_dict())
    sweep: dict = field(default_factory=lambda: {"spaces": ["pixel", "latent"], "samplers": ["ddpm", "ddim"],
                                                 "lambdas": [10, 30, 50], "metrics": ["psnr", "mae", "ssim"],
                                                 "standardization": "pooled"})
    train: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=lambda: {"global": 0})

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise UsageError(f"config schema_version must be {SCHEMA_VERSION}")
        base = cls()
        unknown = set(d) - set(base.to_dict())
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}")
        merged = base.to_dict()
        for k, v in d.items():
            merged[k] = {**merged[k], **v} if isinstance(merged[k], dict) else v
        return cls(**merged)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh)).validate()
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc

    def validate(self):
        """Every configured path must exist or have an existing parent."""
        for key, value in self.paths.items():
            p = Path(value)
            if not (p.exists() or p.resolve().parent.is_dir()):
                raise UsageError(f"config path {key}={value!r} is not resolvable")
        return self

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n")


def _seed(args, cfg):
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("ECGQ_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"ECGQ_SEED must be an integer, got {env!r}") from None
    return int(cfg.seeds.get("global", 0))


def _pick(flag, default):
    return default if flag is None else flag


def _csv_list(text, conv=str):
    try:
        return [conv(t.strip()) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"bad list value {text!r}") from None


def _aslt_cfg(cfg):
    return AsltConfig(**cfg.aslt)


def _limit_threads(n):
    if n is None:
        return None
    if n < 1:
        raise UsageError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


# ---------------------------------------------------------------- helpers

def _load_corpus(data_dir, select):
    from .pipeline import read_corpus

    if not (Path(data_dir) / "manifest.csv").exists():
        raise FileNotFoundError(f"{data_dir}: no manifest.csv")
    return read_corpus(data_dir, select)


def _as_set(records, aslt_cfg):
    return ScalogramSet.from_records(records, aslt_cfg)


def _repro(args, cfg, seed):
    from .report import reproducibility_block

    # output location/format, logging and thread count do not change results
    skip = {"func", "out", "svg", "log_level", "threads"}
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    return reproducibility_block({"config": cfg.to_dict(), "flags": flags}, {"global": seed})


# ------------------------------------------------------------- subcommands

def cmd_synth(args, cfg):
    from .pipeline import synth_corpus, write_corpus

    mix = {}
    for part in _csv_list(args.noise_mix or ""):
        kind, _, frac = part.partition("=")
        if kind not in NOISE_KINDS:
            raise UsageError(f"unknown noise kind {kind!r} in --noise-mix")
        try:
            mix[kind] = float(frac)
        except ValueError:
            raise UsageError(f"bad fraction in --noise-mix: {part!r}") from None
    if sum(mix.values()) > 1.0 + 1e-9:
        raise UsageError("--noise-mix fractions exceed 1")
    seed = _seed(args, cfg)
    records, manifest = synth_corpus(args.count, (args.hr_min, args.hr_max), mix, args.snr_db, seed,
                                     args.fs, args.duration)
    out = write_corpus(records, manifest, args.out)
    log.info("wrote %d records to %s", len(records), out)
    return 0


def cmd_ingest(args, cfg):
    rec = ingest_record(args.path, args.format, fs=args.fs, channel=args.channel)
    if args.target_fs:
        rec = resample(rec, args.target_fs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    segs = segment(rec, args.window, args.hop)
    rows = []
    from .signalio import SignalRecord

    for seg in segs:
        sid = f"{rec.record_id}-{seg.start:08d}"
        labels = sorted(rec.labels) or ["clean"] if args.assume_clean else sorted(rec.labels)
        write_raw(SignalRecord(seg.samples, seg.fs, rec.channel, labels, rec.seed, sid), out / f"{sid}.f32le")
        rows.append({"id": sid, "labels": "+".join(labels), "seed": "" if rec.seed is None else rec.seed,
                     "snr_db": ""})
    with open(out / "manifest.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["id", "labels", "seed", "snr_db"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    log.info("%s: %d segment(s) of %g s", args.path, len(segs), args.window)
    return 0


def cmd_aslt(args, cfg):
    acfg = _aslt_cfg(cfg)
    records = [ingest_record(args.record)] if args.record else _load_corpus(args.data or cfg.paths["data_dir"], "all")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for rec in records:
        sc = aslt_scalogram(rec, acfg)
        freqs = resize_area(sc.freqs[:, None], rows=32, cols=1)[:, 0]
        times = np.linspace(0, rec.duration, 256, endpoint=False) + rec.duration / 512
        if args.float:
            with np.errstate(divide="ignore"):
                grid = np.log10(resize_area(sc.grid) ** 2).astype(np.float32)
        else:
            grid = to_model_input(sc).u8_grid
        write_scalogram(out / f"{rec.record_id}.scal", grid, freqs, times)
    log.info("wrote %d scalogram(s) to %s", len(records), out)
    return 0


def cmd_train(args, cfg):
    from .diffusion import build_schedule, train_diffusion
    from .net.autoencoder import AutoencoderDet
    from .net.unet import UNetLite
    from .pipeline import TrainConfig, pretrain_autoencoder

    seed = _seed(args, cfg)
    tc = TrainConfig(**{**cfg.train, "seed": seed})
    ckpt_dir = Path(_pick(args.checkpoint_dir, cfg.paths["checkpoint_dir"]))
    ae_path = ckpt_dir / "autoencoder.ckpt"
    if args.kind == "latent" and not ae_path.exists():
        raise FileNotFoundError(f"latent training needs a pretrained autoencoder at {ae_path} "
                                "(run `ecgq train --kind autoencoder` first)")
    records = _load_corpus(_pick(args.data, cfg.paths["data_dir"]), args.select)
    data = _as_set(records, _aslt_cfg(cfg))
    data.require_clean()
    sched = build_schedule(**cfg.schedule)
    meta = {"training_seed": seed, "fingerprint": data.fingerprint(), "schedule": sched.params(),
            "n_train": len(data)}
    epochs = args.epochs
    if args.kind == "autoencoder":
        model = AutoencoderDet(widths=tuple(tc.ae_widths), seed=seed)
        trace = pretrain_autoencoder(model, data, _pick(epochs, tc.ae_epochs), _pick(args.lr, tc.ae_lr),
                                     tc.batch_size, tc.momentum, tc.clip_norm, seed)
    else:
        ae = load_checkpoint(ae_path) if args.kind == "latent" else None
        in_ch = ae.latent_channels if ae is not None else 1
        model = UNetLite(in_ch, tuple(tc.unet_widths), seed, sched.T)
        default_epochs = tc.latent_epochs if args.kind == "latent" else tc.pixel_epochs
        trace = train_diffusion(model, data, sched, _pick(epochs, default_epochs), seed, ae, tc.batch_size,
                                _pick(args.lr, tc.diffusion_lr), tc.momentum, tc.clip_norm).loss_trace
    path = save_checkpoint(model, ckpt_dir / f"{args.kind}.ckpt", meta)
    from .report import write_csv

    write_csv([{"step": i + 1, "loss": v} for i, v in enumerate(trace)], ["step", "loss"],
              ckpt_dir / f"{args.kind}_loss.csv")
    log.info("saved %s (loss %.4f -> %.4f)", path, trace[0], trace[-1])
    return 0


def _recon_cfg(args, cfg, seed):
    base = dict(cfg.reconstruction)
    if getattr(args, "recon_config", None):
        with open(args.recon_config) as fh:
            doc = json.load(fh)
        base.update({k: v for k, v in doc.items() if k in ("space", "sampler", "lambda", "ddim_stride", "seed")})
    for key, flag in (("space", "space"), ("sampler", "sampler"), ("lambda", "lam"), ("ddim_stride", "stride")):
        if getattr(args, flag, None) is not None:
            base[key] = getattr(args, flag)
    base.setdefault("seed", seed)
    if getattr(args, "seed", None) is not None or os.environ.get("ECGQ_SEED") is not None:
        base["seed"] = seed
    try:
        return ReconstructionConfig.from_dict(base)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _bundle(args, cfg):
    from .diffusion import build_schedule
    from .quality import ModelBundle

    ckpt_dir = Path(_pick(args.checkpoint_dir, cfg.paths["checkpoint_dir"]))
    if not ckpt_dir.is_dir():
        raise FileNotFoundError(f"checkpoint directory {ckpt_dir} not found")
    return ModelBundle.load(ckpt_dir, build_schedule(**cfg.schedule))


def cmd_score(args, cfg):
    from .quality import score_set
    from .report import SCORE_COLUMNS, dump_json, write_csv

    seed = _seed(args, cfg)
    rcfg = _recon_cfg(args, cfg, seed)
    records = _load_corpus(_pick(args.data, cfg.paths["data_dir"]), args.select)
    data = _as_set(records, _aslt_cfg(cfg))
    if rcfg.effective_lambda > 0:
        bundle = _bundle(args, cfg)
    else:
        from .diffusion import build_schedule
        from .quality import ModelBundle

        bundle = ModelBundle(build_schedule(**cfg.schedule))
    rows = score_set(bundle, data, rcfg)
    out = Path(_pick(args.out, cfg.paths["report_dir"]))
    write_csv(rows, SCORE_COLUMNS, out / "scores.csv")
    from .report import csv_text

    dump_json({"kind": "score", "reconstruction": rcfg.to_dict(), "reproducibility": _repro(args, cfg, seed),
               "tables": {"scores_csv": csv_text(rows, SCORE_COLUMNS)}}, out / "score_report.json")
    log.info("scored %d segment(s) with %s", len(rows), rcfg.label())
    return 0


def cmd_sweep(args, cfg):
    from .quality import SweepGrid, sweep
    from .report import write_sweep_report

    seed = _seed(args, cfg)
    sw = dict(cfg.sweep)
    if args.spaces:
        sw["spaces"] = _csv_list(args.spaces)
    if args.samplers:
        sw["samplers"] = _csv_list(args.samplers)
    if args.lambdas:
        sw["lambdas"] = _csv_list(args.lambdas, int)
    if args.metrics:
        sw["metrics"] = _csv_list(args.metrics)
    standardization = args.standardization or sw.get("standardization", "pooled")
    try:
        grid = SweepGrid(tuple(sw["spaces"]), tuple(sw["samplers"]), tuple(sw["lambdas"]), tuple(sw["metrics"]),
                         int(cfg.reconstruction.get("ddim_stride", 10)), seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    records = _load_corpus(_pick(args.data, cfg.paths["data_dir"]), "all")
    acfg = _aslt_cfg(cfg)
    clean = _as_set([r for r in records if r.is_clean], acfg)
    noisy = {}
    for kind in NOISE_KINDS:
        recs = [r for r in records if kind in r.labels]
        if recs:
            noisy[kind] = _as_set(recs, acfg)
    report = sweep(grid, clean, noisy, _bundle(args, cfg), standardization)
    out = Path(_pick(args.out, cfg.paths["report_dir"]))
    write_sweep_report(report, out, _repro(args, cfg, seed), svg=args.svg)
    log.info("sweep: %d configurations, chosen %s", len(grid.configs()), report.chosen)
    return 0


def _read_scores(path, column="psnr_db"):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "segment_id" not in rows[0] or column not in rows[0]:
        raise ValueError(f"{path}: expected columns segment_id and {column}")
    return {r["segment_id"]: float(r[column]) for r in rows}


def cmd_refine(args, cfg):
    from .quality import refine_training_set
    from .report import dump_json

    a, b = _read_scores(args.scores_a), _read_scores(args.scores_b)
    ids = refine_training_set(a, b, args.n_percent)
    out = Path(_pick(args.out, cfg.paths["report_dir"]))
    out.mkdir(parents=True, exist_ok=True)
    (out / "refined_ids.txt").write_text("".join(f"{i}\n" for i in ids))
    dump_json({"kind": "refine", "n_percent": args.n_percent, "selected": ids, "n_universe": len(a),
               "reproducibility": _repro(args, cfg, _seed(args, cfg))}, out / "refine_report.json")
    for i in ids:
        print(i)
    return 0


def cmd_monitor(args, cfg):
    from .quality import calibrate_threshold, monitor
    from .report import dump_json, svg_line, write_csv

    seed = _seed(args, cfg)
    rcfg = _recon_cfg(args, cfg, seed)
    rec = ingest_record(args.record, fs=args.fs)
    segs = segment(rec, args.window)
    if not segs:
        raise ValueError(f"{args.record}: shorter than one {args.window} s window")
    calib = list(_read_scores(args.calibration).values()) if args.calibration else None
    threshold = calibrate_threshold(calib, args.threshold)
    res = monitor(segs, _bundle(args, cfg), rcfg, threshold, args.k)
    out = Path(_pick(args.out, cfg.paths["report_dir"]))
    rows = [{"t_start": t, "psnr_db": p, "verdict": "degraded" if d else "ok"}
            for t, p, d in zip(res.times, res.psnr_db, res.degraded)]
    write_csv(rows, ["t_start", "psnr_db", "verdict"], out / "monitor.csv")
    dump_json({"kind": "monitor", "threshold_db": res.threshold_db, "k": res.k,
               "threshold_source": "calibration" if calib else "default",
               "events": [{"first": e[0], "last": e[1], "t_start": e[2], "t_end": e[3]} for e in res.events],
               "reconstruction": rcfg.to_dict(), "reproducibility": _repro(args, cfg, seed)},
              out / "monitor_report.json")
    if args.svg:
        svg_line(res.times, res.psnr_db, out / "monitor.svg", threshold=res.threshold_db)
    log.info("monitor: %d segment(s), %d event(s)", len(rows), len(res.events))
    return 0


# ----------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="ecgq", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"ecgq {__version__}")
    p.add_argument("--config", help="RunConfig JSON file")
    p.add_argument("--threads", type=int, help="cap on worker/BLAS threads (default: all cores)")
    p.add_argument("--log-level", default="INFO")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--seed", type=int, help="global seed (fallback: $ECGQ_SEED, then config)")
        return sp

    sp = add("synth", cmd_synth, "write a synthetic corpus with a manifest")
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--hr-min", type=float, default=50.0)
    sp.add_argument("--hr-max", type=float, default=110.0)
    sp.add_argument("--noise-mix", default="", help="e.g. burst=0.25,static=0.25")
    sp.add_argument("--snr-db", type=float, default=0.0)
    sp.add_argument("--fs", type=float, default=500.0)
    sp.add_argument("--duration", type=float, default=10.0)
    sp.add_argument("--out", required=True)

    sp = add("ingest", cmd_ingest, "read a CSV/raw record, resample and segment it")
    sp.add_argument("path")
    sp.add_argument("--format", choices=["csv", "raw"])
    sp.add_argument("--fs", type=float)
    sp.add_argument("--channel")
    sp.add_argument("--target-fs", type=float)
    sp.add_argument("--window", type=float, default=10.0)
    sp.add_argument("--hop", type=float)
    sp.add_argument("--assume-clean", action="store_true", help="label unlabelled segments clean")
    sp.add_argument("--out", required=True)

    sp = add("aslt", cmd_aslt, "write SCAL1 scalograms")
    src = sp.add_mutually_exclusive_group()
    src.add_argument("--record")
    src.add_argument("--data")
    sp.add_argument("--float", action="store_true", help="store float32 log-power instead of u8")
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "train the autoencoder or a diffusion model")
    sp.add_argument("--kind", choices=["autoencoder", "pixel", "latent"], required=True)
    sp.add_argument("--data")
    sp.add_argument("--select", choices=["clean", "all"], default="clean")
    sp.add_argument("--checkpoint-dir")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)

    for name, func, help_ in (("score", cmd_score, "score a corpus"),
                              ("monitor", cmd_monitor, "long-term PSNR monitoring of one record")):
        sp = add(name, func, help_)
        sp.add_argument("--checkpoint-dir")
        sp.add_argument("--recon-config", help="reconstruction config JSON")
        sp.add_argument("--space", choices=["pixel", "latent"])
        sp.add_argument("--sampler", choices=["ddpm", "ddim"])
        sp.add_argument("--lambda", dest="lam", type=int)
        sp.add_argument("--stride", type=int)
        sp.add_argument("--out")
        if name == "score":
            sp.add_argument("--data")
            sp.add_argument("--select", choices=["clean", "noisy", "all"], default="all")
        else:
            sp.add_argument("--record", required=True)
            sp.add_argument("--fs", type=float)
            sp.add_argument("--window", type=float, default=10.0)
            sp.add_argument("--threshold", type=float, default=24.0)
            sp.add_argument("--k", type=int, default=3)
            sp.add_argument("--calibration", help="scores CSV of clean validation segments")
            sp.add_argument("--svg", action="store_true")

    sp = add("sweep", cmd_sweep, "W1 sweep over reconstruction configurations")
    sp.add_argument("--data")
    sp.add_argument("--checkpoint-dir")
    sp.add_argument("--spaces")
    sp.add_argument("--samplers")
    sp.add_argument("--lambdas")
    sp.add_argument("--metrics")
    sp.add_argument("--standardization", choices=["pooled", "separate"])
    sp.add_argument("--svg", action="store_true")
    sp.add_argument("--out")

    sp = add("refine", cmd_refine, "intersect top-N%% PSNR ids of two score files")
    sp.add_argument("--scores-a", required=True)
    sp.add_argument("--scores-b", required=True)
    sp.add_argument("--n-percent", type=float, required=True)
    sp.add_argument("--out")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(getattr(logging, str(args.log_level).upper(), logging.INFO))
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        limiter = _limit_threads(args.threads)
        try:
            return args.func(args, cfg)
        finally:
            if limiter is not None:
                limiter.unregister() if hasattr(limiter, "unregister") else None
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ecgq: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        log.error("%s: %s", type(exc).__name__, exc)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
