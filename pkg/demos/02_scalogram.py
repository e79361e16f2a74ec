"""Adaptive superlet scalograms and the 32x256 model input.

Run:  python3 demos/02_scalogram.py
"""
import math

import numpy as np

from ecgq.aslt import AsltConfig, aslt_scalogram, order_count, to_model_input, wavelet_response, write_scalogram
from ecgq.signalio import NoiseSpec, inject_noise, synth_clean

cfg = AsltConfig()
print("orders used at 0.5 / 10 / 40 Hz:", [order_count(f, cfg) for f in (0.5, 10, 40)])

# Unit sinusoid: single-order responses sit near sqrt(2)/2 away from the edges.
t = np.arange(5000) / 500
w = wavelet_response(np.sin(2 * np.pi * 10 * t), 10, 3, fs=500)
print(f"10 Hz response mid-signal: {w[2500]:.4f} (sqrt(2)/2 = {math.sqrt(2) / 2:.4f})")

clean = synth_clean(65, seed=4)
noisy = inject_noise(clean, NoiseSpec("static", 0.0), 5)
for rec in (clean, noisy):
    sc = aslt_scalogram(rec, cfg)
    ns = to_model_input(sc)
    top = sc.freqs[np.argmax(sc.grid.mean(axis=1))]
    print(f"{sorted(rec.labels)[0]:7s} raw grid {sc.grid.shape}, strongest row {top:5.2f} Hz; "
          f"model input {ns.x.shape}, mean u8 {ns.u8_grid.mean():6.1f}, x in [{ns.x.min():+.3f}, {ns.x.max():+.3f}]")

out = write_scalogram("demo_clean.scal", to_model_input(aslt_scalogram(clean)).u8_grid)
print(f"wrote {out} ({out.stat().st_size} bytes, SCAL1 u8)")
