"""Desk-scale separation experiment shared by the acceptance and model tests."""
import time
from dataclasses import dataclass, field

import numpy as np

from ecgq.dataset import ScalogramSet
from ecgq.diffusion import ReconstructionConfig
from ecgq.metrics import mae, standardized_w1
from ecgq.pipeline import TrainConfig, noisy_record, train_bundle
from ecgq.quality import score_set
from ecgq.signalio import synth_clean

N_TRAIN, N_TEST = 512, 200
FINAL = ReconstructionConfig("latent", "ddim", 30, 10, seed=0)


@dataclass
class ToyRun:
    bundle: object
    traces: dict
    train: ScalogramSet
    test: dict                      # kind -> ScalogramSet
    rows: dict                      # kind -> score rows at FINAL
    psnr: dict                      # kind -> list of PSNR (dB)
    w1: dict                        # "static", "burst", "clean_halves"
    ae_heldout_mae: float
    seconds: dict = field(default_factory=dict)


def clean_records(n, seed, prefix):
    rng = np.random.default_rng(seed)
    hrs = rng.uniform(50, 110, n)
    seeds = rng.integers(0, 2**31 - 1, n)
    return [synth_clean(float(h), seed=int(s), record_id=f"{prefix}-{i:04d}") for i, (h, s) in
            enumerate(zip(hrs, seeds))]


def noisy_records(kind, n, seed):
    seeds = np.random.default_rng(seed).integers(0, 2**31 - 1, n)
    return [noisy_record(kind, 0.0, int(s), record_id=f"{kind}-{i:04d}") for i, s in enumerate(seeds)]


def build_sets():
    train = ScalogramSet.from_records(clean_records(N_TRAIN, 100, "train"))
    test = {"clean": ScalogramSet.from_records(clean_records(N_TEST, 200, "clean")),
            "burst": ScalogramSet.from_records(noisy_records("burst", N_TEST, 300)),
            "static": ScalogramSet.from_records(noisy_records("static", N_TEST, 400))}
    return train, test


def run_toy_experiment(spaces=("pixel", "latent")):
    t0 = time.perf_counter()
    train, test = build_sets()
    t1 = time.perf_counter()
    bundle, traces = train_bundle(train, TrainConfig(), spaces)
    t2 = time.perf_counter()
    rows = {k: score_set(bundle, v, FINAL) for k, v in test.items()}
    psnr = {k: [r["psnr_db"] for r in v] for k, v in rows.items()}
    half = N_TEST // 2
    w1 = {"static": standardized_w1(psnr["clean"], psnr["static"]),
          "burst": standardized_w1(psnr["clean"], psnr["burst"]),
          "clean_halves": standardized_w1(psnr["clean"][:half], psnr["clean"][half:])}
    ae = bundle.autoencoder
    x = test["clean"].x
    rec = np.concatenate([ae.reconstruct(x[i:i + 50]) for i in range(0, len(x), 50)])
    t3 = time.perf_counter()
    return ToyRun(bundle, traces, train, test, rows, psnr, w1, mae(np.clip(rec, -1, 1), x),
                  {"aslt": t1 - t0, "train": t2 - t1, "score": t3 - t2, "total": t3 - t0})


if __name__ == "__main__":
    import logging

    logging.basicConfig(level=logging.INFO)
    run = run_toy_experiment()
    print(run.w1, run.ae_heldout_mae, run.seconds, {k: np.mean(v) for k, v in run.psnr.items()})
