"""Train a small model bundle, then score, sweep, refine, profile and monitor.

This is a reduced version of the acceptance experiment (64 training
segments instead of 512) and runs in a couple of minutes on one core.

Run:  python3 demos/05_quality.py
"""
import numpy as np

from ecgq.aslt import from_model_output
from ecgq.dataset import ScalogramSet
from ecgq.diffusion import ReconstructionConfig, reconstruct
from ecgq.pipeline import TrainConfig, noisy_record, train_bundle
from ecgq.quality import SweepGrid, local_psnr_profile, monitor, refine_training_set, score_set, sweep
from ecgq.signalio import NoiseSpec, SignalRecord, inject_noise, segment, synth_clean

rng = np.random.default_rng(0)
train = ScalogramSet.from_records([synth_clean(rng.uniform(50, 110), seed=i, record_id=f"tr-{i}") for i in range(64)])
test_clean = ScalogramSet.from_records([synth_clean(rng.uniform(50, 110), seed=1000 + i, record_id=f"c-{i}")
                                        for i in range(24)])
noisy = {k: ScalogramSet.from_records([noisy_record(k, 0.0, 2000 + i, record_id=f"{k}-{i}") for i in range(24)])
         for k in ("burst", "static")}

cfg = TrainConfig(ae_epochs=12, latent_epochs=60, pixel_epochs=1)
bundle, traces = train_bundle(train, cfg)
for name, tr in traces.items():
    print(f"{name:12s} loss {np.mean(tr[:4]):.3f} -> {np.mean(tr[-4:]):.3f} over {len(tr)} steps")

# Sweep: standardized W1 between clean and each noise kind, per configuration.
report = sweep(SweepGrid(("latent",), ("ddim",), (10, 30, 50)), test_clean, noisy, bundle)
for c in report.w1:
    if c["metric"] == "psnr":
        print(f"  {c['config']:16s} {c['kind']:7s} W1 {c['w1']:.3f}")
print("chosen configuration:", report.chosen)

# Refinement: keep training ids that rank in the top half under two configurations.
final = ReconstructionConfig("latent", "ddim", 30)
# the pixel model gets only a few steps here, so its ranking is close to arbitrary
a = {r["segment_id"]: r["psnr_db"] for r in score_set(bundle, train, ReconstructionConfig("pixel", "ddim", 50))}
b = {r["segment_id"]: r["psnr_db"] for r in score_set(bundle, train, ReconstructionConfig("latent", "ddim", 40))}
print(f"refined training set: {len(refine_training_set(a, b, 50))} of {len(train)} ids")

# Local PSNR exposes a short burst that the global value dilutes.
rec = inject_noise(synth_clean(70, seed=9), NoiseSpec("burst", 0.0, burst=(6.0, 1.25)), 1)
one = ScalogramSet.from_records([rec])
out = reconstruct(bundle.latent, one.x, final, bundle.schedule, bundle.autoencoder, keys=one.ids)
prof = local_psnr_profile(one.u8[0], from_model_output(out[0, 0]), 32, 32)
print(f"global PSNR {prof.global_psnr_db:.2f} dB, worst 1.25-s window {prof.min_psnr_db:.2f} dB "
      f"starting at {prof.min_start * 10 / 256:.2f} s")

# Monitoring: a 60-s stream that flat-lines after 30 s.
x = synth_clean(75, dur_s=60, seed=5).samples.copy()
x[15000:] = 0.0
segs = segment(SignalRecord(x, 500, labels={"clean"}, record_id="stream"))
calib = [r["psnr_db"] for r in score_set(bundle, test_clean, final)]
res = monitor(segs, bundle, final, calibration_psnr=calib)
print(f"threshold {res.threshold_db:.2f} dB; PSNR per segment", [round(p, 1) for p in res.psnr_db])
print("degradation events (first, last, t_start, t_end):", res.events)
