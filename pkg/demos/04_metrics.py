"""Reconstruction metrics and the standardized Wasserstein-1 distance.

Run:  python3 demos/04_metrics.py
"""
import numpy as np

from ecgq.metrics import score_pair, standardized_w1, wasserstein1

rng = np.random.default_rng(0)
a = rng.integers(30, 220, (32, 256))
for sd in (0, 2, 8, 32):
    b = np.clip(np.round(a + rng.normal(0, sd, a.shape)), 0, 255) if sd else a
    s = score_pair(a, b)
    print(f"noise sd {sd:2d}: PSNR {s['psnr_db']:6.2f} dB  MAE {s['mae']:6.2f}  SSIM {s['ssim']:.3f}")

print("W1({1,2,3}, {2,3,4}) =", wasserstein1([1, 2, 3], [2, 3, 4]))

# Clean segments reconstruct well (high PSNR), noisy ones less so.  Pooled
# standardization keeps that offset; per-sample standardization removes it.
clean, noisy = rng.normal(30, 1.2, 200), rng.normal(26, 2.5, 200)
print(f"pooled W1 {standardized_w1(clean, noisy):.3f}   separate W1 {standardized_w1(clean, noisy, 'separate'):.3f}")
