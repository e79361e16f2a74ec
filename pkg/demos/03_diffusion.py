"""Noise schedule, forward noising and the two reverse samplers.

An oracle that knows x0 predicts the exact noise, so both samplers must
return x0 up to float rounding.  A real model replaces the oracle later.

Run:  python3 demos/03_diffusion.py
"""
import numpy as np

from ecgq.diffusion import ReconstructionConfig, build_schedule, forward_noise, reconstruct

sched = build_schedule()
print(f"T={sched.T}  abar_1={sched.alpha_bar[1]:.6f}  abar_30={sched.alpha_bar[30]:.4f}  "
      f"abar_T={sched.alpha_bar[-1]:.2e}  beta_tilde_1={sched.beta_tilde[1]}")

x0 = np.random.default_rng(0).uniform(-1, 1, (2, 1, 32, 256))
x30 = forward_noise(x0, 30, np.random.default_rng(1).standard_normal(x0.shape), sched)
print(f"at lambda=30 the input keeps sqrt(abar)={np.sqrt(sched.alpha_bar[30]):.3f} of its amplitude; "
      f"corr(x0, x30)={np.corrcoef(x0.ravel(), x30.ravel())[0, 1]:.3f}")


class Oracle:
    calls = 0

    def __call__(self, x_t, t):
        Oracle.calls += 1
        ab = sched.alpha_bar[t]
        return (x_t - np.sqrt(ab) * x0) / np.sqrt(1 - ab)


for cfg in (ReconstructionConfig("pixel", "ddpm", 30), ReconstructionConfig("pixel", "ddim", 30, 10)):
    Oracle.calls = 0
    out = reconstruct(Oracle(), x0, cfg, sched)
    print(f"{cfg.label():16s} steps {cfg.timesteps()[:4]}...  model calls {Oracle.calls:2d}  "
          f"max error {np.max(np.abs(out - x0)):.1e}")
