import time

import numpy as np
import pytest

from ecgq.dataset import ContaminatedDataset, ScalogramSet
from ecgq.diffusion import (ReconstructionConfig, build_schedule, ddim_reverse_step, ddpm_reverse_step,
                            forward_noise, item_rngs, reconstruct, train_diffusion)
from ecgq.net import AutoencoderDet, UNetLite

SCHED = build_schedule()


class OracleEps:
    """Returns the exact noise that maps the known x0 to x_t at step t."""

    def __init__(self, x0, sched=SCHED):
        self.x0, self.sched, self.calls = np.asarray(x0, dtype=np.float64), sched, 0

    def __call__(self, x_t, t):
        self.calls += 1
        ab = self.sched.alpha_bar[t]
        return (x_t - np.sqrt(ab) * self.x0) / np.sqrt(1.0 - ab)


class Zero:
    def __call__(self, x_t, t):
        return np.zeros_like(x_t)


def test_schedule_examples():
    assert SCHED.alpha_bar[1] == pytest.approx(0.9999, abs=1e-15)
    assert SCHED.beta_tilde[1] == 0.0
    oracle = 1.0
    for b in np.linspace(1e-4, 0.02, 1000):
        oracle *= 1.0 - b
    assert SCHED.alpha_bar[1000] == pytest.approx(oracle, rel=1e-9)
    assert SCHED.alpha_bar[1000] < 1e-4
    assert np.all(np.diff(SCHED.alpha_bar) < 0)
    b = SCHED.beta[1:]
    assert np.all((b > 0) & (b < 1)) and np.all(np.diff(b) >= 0)
    for tab in (SCHED.beta, SCHED.alpha, SCHED.alpha_bar, SCHED.beta_tilde):
        assert np.all(np.isfinite(tab))
    with pytest.raises(ValueError):
        build_schedule(beta_1=0.03, beta_T=0.02)
    with pytest.raises(ValueError):
        build_schedule(beta_T=1.0)


def test_forward_noise_examples():
    sched = build_schedule(T=1, beta_1=0.75, beta_T=0.75)  # abar_1 = 0.25
    x0 = np.random.default_rng(0).standard_normal((3, 4))
    np.testing.assert_allclose(forward_noise(x0, 1, np.zeros_like(x0), sched), 0.5 * x0, rtol=1e-15)
    eps = np.ones_like(x0)
    assert np.max(np.abs(forward_noise(x0, 1000, eps, SCHED) - eps)) < 0.02
    with pytest.raises(ValueError):
        forward_noise(x0, 3, np.zeros((3, 5)), SCHED)


@pytest.mark.parametrize("t", [1, 30, 250, 900])
def test_forward_moments(t):
    rng = np.random.default_rng(t)
    x0 = rng.uniform(-1, 1, (4, 4))
    n = 10_000
    xt = forward_noise(np.broadcast_to(x0, (n, 4, 4)), t, rng.standard_normal((n, 4, 4)), SCHED)
    ab = SCHED.alpha_bar[t]
    sd = np.sqrt(1 - ab)
    assert np.all(np.abs(xt.mean(0) - np.sqrt(ab) * x0) <= 3 * sd / np.sqrt(n))
    assert np.all(np.abs(xt.var(0) / (1 - ab) - 1) <= 0.05)


def test_per_sample_steps():
    x0 = np.ones((3, 1, 2, 2))
    out = forward_noise(x0, np.array([1, 10, 100]), np.zeros_like(x0), SCHED)
    np.testing.assert_allclose(out[:, 0, 0, 0], np.sqrt(SCHED.alpha_bar[[1, 10, 100]]))


def test_ddpm_step_t1_inverts():
    rng = np.random.default_rng(0)
    x0 = rng.uniform(-1, 1, (2, 1, 4, 8))
    eps = rng.standard_normal(x0.shape)
    x1 = forward_noise(x0, 1, eps, SCHED)
    out = ddpm_reverse_step(OracleEps(x0), x1, 1, SCHED, rng)
    assert np.max(np.abs(out - x0)) <= 1e-5


def test_ddpm_step_zero_model_is_pure_noise():
    x = np.zeros((2, 3))
    out = ddpm_reverse_step(Zero(), x, 40, SCHED, np.random.default_rng(5))
    ref = np.sqrt(SCHED.beta_tilde[40]) * np.random.default_rng(5).standard_normal((2, 3))
    np.testing.assert_array_equal(out, ref)
    again = ddpm_reverse_step(Zero(), x, 40, SCHED, np.random.default_rng(5))
    assert again.tobytes() == out.tobytes()
    with pytest.raises(ValueError):
        ddpm_reverse_step(Zero(), x, 0, SCHED, np.random.default_rng(5))


def test_ddim_step_properties():
    rng = np.random.default_rng(1)
    x0 = rng.uniform(-1, 1, (1, 1, 4, 8))
    eps = rng.standard_normal(x0.shape)
    xt = forward_noise(x0, 50, eps, SCHED)
    np.testing.assert_allclose(ddim_reverse_step(OracleEps(x0), xt, 50, 20, SCHED),
                               forward_noise(x0, 20, eps, SCHED), rtol=1e-10, atol=1e-12)
    x0_hat = ddim_reverse_step(OracleEps(x0), xt, 50, 0, SCHED)
    np.testing.assert_allclose(x0_hat, x0, atol=1e-12)
    with pytest.raises(ValueError):
        ddim_reverse_step(Zero(), xt, 20, 20, SCHED)


def test_config_lambda_reduction():
    cfg = ReconstructionConfig("pixel", "ddim", 37, 10)
    assert cfg.effective_lambda == 30 and cfg.timesteps() == [30, 20, 10, 0]
    assert ReconstructionConfig("pixel", "ddpm", 3).timesteps() == [3, 2, 1, 0]
    assert ReconstructionConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        ReconstructionConfig("voxel")
    with pytest.raises(ValueError):
        ReconstructionConfig(lam=-1)


def test_three_reverse_evaluations():
    x = np.random.default_rng(0).uniform(-1, 1, (2, 1, 8, 16))
    oracle = OracleEps(x)
    reconstruct(oracle, x, ReconstructionConfig("pixel", "ddim", 30, 10), SCHED)
    assert oracle.calls == 3


def test_lambda_zero_identity():
    x = np.random.default_rng(0).uniform(-1, 1, (2, 1, 8, 16))
    out = reconstruct(None, x, ReconstructionConfig("latent", "ddpm", 0), SCHED)
    assert np.array_equal(out, x)


def test_oracle_inversion_all_lambdas():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, (3, 1, 32, 256))
    for lam in (1, 10, 30, 50):
        for sampler in ("ddpm", "ddim"):
            cfg = ReconstructionConfig("pixel", sampler, lam, ddim_stride=1 if lam < 10 else 10, seed=lam)
            out = reconstruct(OracleEps(x), x, cfg, SCHED)
            assert np.max(np.abs(out - x)) <= 1e-5, (lam, sampler)
    assert time.perf_counter() - t0 < 10


class LatentOracle:
    def __init__(self, ae, x):
        self.inner = OracleEps(ae.encode(x))

    def __call__(self, z, t):
        return self.inner(z, t)


@pytest.mark.parametrize("sampler", ["ddpm", "ddim"])
def test_latent_oracle_roundtrip(sampler):
    ae = AutoencoderDet(widths=(8, 8), seed=0, latent_scale=0.5)
    x = np.random.default_rng(3).uniform(-1, 1, (2, 1, 32, 256))
    out = reconstruct(LatentOracle(ae, x), x, ReconstructionConfig("latent", sampler, 20), SCHED, ae)
    ref = np.clip(ae.decode(ae.encode(x)), -1, 1)
    assert np.max(np.abs(out - ref)) <= 1e-4
    with pytest.raises(ValueError, match="autoencoder"):
        reconstruct(LatentOracle(ae, x), x, ReconstructionConfig("latent", sampler, 20), SCHED)


def test_reconstruct_determinism_and_batch_independence():
    net = UNetLite(widths=(4, 8, 8), seed=0)
    x = np.random.default_rng(4).uniform(-1, 1, (3, 1, 32, 256))
    ids = ["a", "b", "c"]
    for sampler in ("ddim", "ddpm"):
        cfg = ReconstructionConfig("pixel", sampler, 12, 4, seed=9)
        a = reconstruct(net, x, cfg, SCHED, keys=ids)
        b = reconstruct(net, x, cfg, SCHED, keys=ids)
        assert a.tobytes() == b.tobytes()
        single = reconstruct(net, x[1:2], cfg, SCHED, keys=ids[1:2])
        np.testing.assert_allclose(single[0], a[1], rtol=1e-5, atol=1e-6)
        assert np.all(np.abs(a) <= 1)
    r1, r2 = item_rngs(0, ["a", "b"])
    assert r1.standard_normal() != r2.standard_normal()


def _toy_set(n, label="clean"):
    rng = np.random.default_rng(0)
    x = np.clip(rng.normal(0, 0.2, (n, 1, 32, 256)) + np.linspace(-0.6, 0.6, 256), -1, 1)
    return ScalogramSet([f"s{i}" for i in range(n)], x.astype(np.float32), [frozenset({label})] * n)


def test_train_refuses_noisy_data():
    data = _toy_set(4)
    data.labels[2] = frozenset({"burst"})
    with pytest.raises(ContaminatedDataset):
        train_diffusion(UNetLite(widths=(4, 4, 4)), data, SCHED)


def test_initial_loss_near_one_and_deterministic():
    data = _toy_set(16)
    runs = [train_diffusion(UNetLite(widths=(8, 8, 8), seed=1), data, SCHED, epochs=1, seed=3, batch_size=8)
            for _ in range(2)]
    assert runs[0].loss_trace == runs[1].loss_trace
    assert runs[0].loss_trace[0] == pytest.approx(1.0, abs=0.1)
    assert all(v >= 0 for v in runs[0].loss_trace)
    p0, p1 = runs[0].model.parameters(), runs[1].model.parameters()
    assert all(p0[k].tobytes() == p1[k].tobytes() for k in p0)


def test_trained_model_depends_on_t(toy_run):
    net = toy_run.bundle.latent
    z = np.random.default_rng(0).standard_normal((1, 4, 8, 64)).astype(np.float32)
    assert not np.allclose(net(z, 1), net(z, 1000), atol=1e-3)


def test_clean_reconstructs_better_than_burst(toy_run):
    assert np.mean(toy_run.psnr["clean"]) >= np.mean(toy_run.psnr["burst"])
