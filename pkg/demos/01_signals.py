"""Synthetic ECG, calibrated noise and 10-s segmentation.

Run:  python3 demos/01_signals.py
"""
import numpy as np

from ecgq.signalio import NoiseSpec, count_r_peaks, inject_noise, realized_snr_db, resample, segment, synth_clean

# A 35-s clean recording at 72 bpm.  Same seed, same samples.
clean = synth_clean(72, fs=500, dur_s=35, seed=1, record_id="demo")
print(f"{clean.record_id}: {len(clean)} samples @ {clean.fs:g} Hz, {count_r_peaks(clean.samples, clean.fs)} R-peaks")

# Each noise kind is scaled so the SNR over its support hits the target.
for spec in (NoiseSpec("static", 0.0),
             NoiseSpec("burst", 0.0, burst=(12.0, 2.0)),
             NoiseSpec("baseline_drift", 6.0, drift_hz=0.2)):
    noisy = inject_noise(clean, spec, seed=3)
    support = slice(6000, 7000) if spec.kind == "burst" else slice(None)
    snr = realized_snr_db(clean.samples, noisy.samples, support)
    print(f"  {spec.kind:15s} target {spec.snr_db:+.1f} dB  realized {snr:+.2f} dB  labels {sorted(noisy.labels)}")

# External recordings arrive at other rates; resample, then cut 10-s windows.
at360 = resample(clean, 360)
segs = segment(at360)
print(f"resampled to 360 Hz: {len(at360)} samples -> {len(segs)} segments "
      f"({', '.join(s.segment_id for s in segs)}); the 5-s remainder is dropped")
assert np.array_equal(np.concatenate([s.samples for s in segs]), at360.samples[:3 * 3600])
