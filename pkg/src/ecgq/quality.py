"""Segment scoring, configuration sweeps, training-set refinement and monitoring."""
from __future__ import annotations

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aslt import AsltConfig, from_model_output
from .dataset import ScalogramSet
from .diffusion import ReconstructionConfig, build_schedule, reconstruct
from .metrics import DegenerateInput, PSNR_CAP_DB, psnr, score_pair, standardized_w1

log = logging.getLogger(__name__)

METRICS = ("psnr", "mae", "ssim")
METRIC_COLUMNS = {"psnr": "psnr_db", "mae": "mae", "ssim": "ssim"}
DEFAULT_THRESHOLD_DB = 24.0


@dataclass
class ModelBundle:
    schedule: object = field(default_factory=build_schedule)
    pixel: object = None
    latent: object = None
    autoencoder: object = None

    def model_for(self, space):
        model = self.pixel if space == "pixel" else self.latent
        if model is None:
            raise ValueError(f"no trained {space}-space model loaded")
        if space == "latent" and self.autoencoder is None:
            raise ValueError("latent space needs an autoencoder checkpoint")
        return model

    @classmethod
    def load(cls, ckpt_dir, schedule=None):
        from .net.checkpoint import load_checkpoint

        ckpt_dir = Path(ckpt_dir)
        parts = {}
        for name in ("pixel", "latent", "autoencoder"):
            p = ckpt_dir / f"{name}.ckpt"
            parts[name] = load_checkpoint(p) if p.exists() else None
        if schedule is None:
            meta = next((m.meta for m in (parts["pixel"], parts["latent"]) if m is not None), {})
            sp = meta.get("schedule", {})
            schedule = build_schedule(sp.get("T", 1000), sp.get("beta_1", 1e-4), sp.get("beta_T", 0.02))
        return cls(schedule, **parts)


def label_name(labels):
    return "+".join(sorted(labels)) or "unlabelled"


# ------------------------------------------------------------------ scoring

def score_set(models, data, cfg, batch_size=32):
    """Score every item of a :class:`ScalogramSet`; one dict row per item."""
    # lambda = 0 is the identity and needs no trained model
    identity = cfg.effective_lambda == 0
    model = None if identity else models.model_for(cfg.space)
    ae = models.autoencoder if cfg.space == "latent" and not identity else None
    rows = []
    for i in range(0, len(data), batch_size):
        ids = data.ids[i:i + batch_size]
        rec = reconstruct(model, data.x[i:i + batch_size], cfg, models.schedule, ae, keys=ids)
        for j, sid in enumerate(ids):
            orig = data.u8[i + j] if data.u8 is not None else from_model_output(data.x[i + j, 0])
            row = {"segment_id": str(sid), "label": label_name(data.labels[i + j]),
                   "lambda": cfg.lam, "sampler": cfg.sampler, "space": cfg.space}
            row.update(score_pair(orig, from_model_output(rec[j, 0])))
            rows.append(row)
    return rows


def score_segment(models, seg, cfg, aslt_cfg=AsltConfig()):
    """ASLT -> normalize -> reconstruct -> PSNR/MAE/SSIM for one segment."""
    data = ScalogramSet.from_records([seg], aslt_cfg)
    return score_set(models, data, cfg)[0]


# -------------------------------------------------------------------- sweep

@dataclass(frozen=True)
class SweepGrid:
    spaces: tuple = ("pixel", "latent")
    samplers: tuple = ("ddpm", "ddim")
    lambdas: tuple = (10, 30, 50)
    metrics: tuple = METRICS
    ddim_stride: int = 10
    seed: int = 0

    def __post_init__(self):
        for name in ("spaces", "samplers", "lambdas", "metrics"):
            if not getattr(self, name):
                raise ValueError(f"sweep grid axis {name!r} is empty")
        bad = set(self.metrics) - set(METRICS)
        if bad:
            raise ValueError(f"unknown metrics {sorted(bad)}")

    def configs(self):
        lams = []
        for lam in self.lambdas:
            if lam in lams:
                warnings.warn(f"duplicate lambda {lam} in sweep grid ignored", stacklevel=2)
                continue
            lams.append(lam)
        return [ReconstructionConfig(sp, sa, int(lam), self.ddim_stride, self.seed)
                for sp, sa, lam in itertools.product(self.spaces, self.samplers, lams)]


@dataclass
class QualityReport:
    rows: list
    w1: list              # dicts: config, kind, metric, w1 (None when absent), n_clean, n_noisy
    best: dict            # "kind/metric" -> config label
    chosen: str | None
    thresholds: dict
    metadata: dict = field(default_factory=dict)

    def cell(self, config, kind, metric):
        for c in self.w1:
            if (c["config"], c["kind"], c["metric"]) == (config, kind, metric):
                return c
        raise KeyError((config, kind, metric))


def sweep(grid, clean, noisy, models, standardization="pooled"):
    """Score every configuration and tabulate standardized W1 (clean vs each noise kind)."""
    for space in grid.spaces:
        models.model_for(space)
    rows, table = [], []
    best_val = {}
    best = {}
    for cfg in grid.configs():
        clean_rows = score_set(models, clean, cfg)
        rows.extend(clean_rows)
        for kind in sorted(noisy):
            data = noisy[kind]
            noisy_rows = score_set(models, data, cfg) if data is not None and len(data) else []
            rows.extend(noisy_rows)
            for metric in grid.metrics:
                col = METRIC_COLUMNS[metric]
                p = [r[col] for r in clean_rows]
                q = [r[col] for r in noisy_rows]
                value = None
                if p and q:
                    try:
                        value = standardized_w1(p, q, standardization)
                    except DegenerateInput as exc:
                        log.warning("W1 cell %s/%s/%s absent: %s", cfg.label(), kind, metric, exc)
                table.append({"config": cfg.label(), "kind": kind, "metric": metric, "w1": value,
                              "n_clean": len(p), "n_noisy": len(q)})
                key = f"{kind}/{metric}"
                if value is not None and value > best_val.get(key, -math.inf):
                    best_val[key], best[key] = value, cfg.label()
    # overall choice: mean PSNR-based W1 over noise kinds
    chosen, chosen_val = None, -math.inf
    for label in dict.fromkeys(c["config"] for c in table):
        vals = [c["w1"] for c in table if c["config"] == label and c["metric"] == grid.metrics[0]]
        if vals and all(v is not None for v in vals) and np.mean(vals) > chosen_val:
            chosen, chosen_val = label, float(np.mean(vals))
    meta = {"standardization": standardization, "ssim_window": 8, "psnr_cap_db": PSNR_CAP_DB,
            "grid": {"spaces": list(grid.spaces), "samplers": list(grid.samplers),
                     "lambdas": [c for c in dict.fromkeys(grid.lambdas)], "metrics": list(grid.metrics),
                     "ddim_stride": grid.ddim_stride, "seed": grid.seed}}
    return QualityReport(rows, table, best, chosen, {"psnr_db": DEFAULT_THRESHOLD_DB}, meta)


# --------------------------------------------------------------- refinement

def top_fraction(scores, n_percent):
    """Ids in the top ceil(N% * n) by score; ties broken by ascending id."""
    k = math.ceil(n_percent / 100.0 * len(scores) - 1e-9)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return {i for i, _ in ranked[:k]}


def refine_training_set(scores_a, scores_b, n_percent):
    """Intersection of the top-N% PSNR ids under two configurations (sorted list)."""
    if set(scores_a) != set(scores_b):
        raise ValueError("score maps must cover the same ids")
    if not 0 < n_percent <= 100:
        raise ValueError("n_percent must be in (0, 100]")
    keep = sorted(top_fraction(scores_a, n_percent) & top_fraction(scores_b, n_percent))
    if not keep:
        warnings.warn("refinement intersection is empty", stacklevel=2)
    return keep


# ----------------------------------------------------------- localized PSNR

@dataclass
class LocalProfile:
    starts: list
    psnr_db: list
    global_psnr_db: float
    window_cols: int
    stride_cols: int

    @property
    def min_index(self):
        return int(np.argmin(self.psnr_db))

    @property
    def min_psnr_db(self):
        return float(self.psnr_db[self.min_index])

    @property
    def min_start(self):
        return int(self.starts[self.min_index])


def local_psnr_profile(a, b, window_cols=32, stride_cols=8):
    """PSNR over column windows spanning all rows of two equal-shape grids."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    cols = a.shape[1]
    if not 1 <= window_cols <= cols or stride_cols < 1:
        raise ValueError(f"window of {window_cols} columns does not fit a {cols}-column grid")
    starts = list(range(0, cols - window_cols + 1, stride_cols))
    vals = [psnr(a[:, s:s + window_cols], b[:, s:s + window_cols]) for s in starts]
    return LocalProfile(starts, vals, psnr(a, b), window_cols, stride_cols)


# --------------------------------------------------------------- monitoring

@dataclass
class MonitorResult:
    times: list
    psnr_db: list
    degraded: list
    events: list          # (first_index, last_index, t_start, t_end)
    threshold_db: float
    k: int


def calibrate_threshold(calibration_psnr=None, default=DEFAULT_THRESHOLD_DB):
    """1st percentile of clean-validation PSNR, or the fixed default."""
    if calibration_psnr is None or len(calibration_psnr) == 0:
        return float(default)
    return float(np.percentile(np.asarray(calibration_psnr, dtype=np.float64), 1))


def monitor_scores(times, psnr_db, threshold_db=DEFAULT_THRESHOLD_DB, k=3):
    """Fold a chronological PSNR series into verdicts and degradation events.

    An event opens once ``k`` consecutive segments fall below the threshold
    and extends while they stay below it.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    times = [float(t) for t in times]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("segments must be in strictly increasing time order")
    degraded = [p < threshold_db for p in psnr_db]
    events = []
    run_start = None
    for i, bad in enumerate(degraded + [False]):
        if bad and run_start is None:
            run_start = i
        elif not bad and run_start is not None:
            if i - run_start >= k:
                events.append((run_start, i - 1, times[run_start], times[i - 1]))
            run_start = None
    return MonitorResult(times, list(map(float, psnr_db)), degraded, events, float(threshold_db), k)


def monitor(segments, models, cfg, threshold_db=DEFAULT_THRESHOLD_DB, k=3,
            calibration_psnr=None, aslt_cfg=AsltConfig()):
    """Score a chronological segment stream and flag sustained degradation."""
    segments = list(segments)
    times = [s.start / s.fs for s in segments]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("segments must be in strictly increasing time order")
    if calibration_psnr is not None:
        threshold_db = calibrate_threshold(calibration_psnr)
    data = ScalogramSet.from_records(segments, aslt_cfg, ids=[s.segment_id for s in segments])
    rows = score_set(models, data, cfg)
    return monitor_scores(times, [r["psnr_db"] for r in rows], threshold_db, k)
