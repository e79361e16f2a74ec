import numpy as np
import pytest

from conftest import fd_check, probe
from ecgq.net import SGD, AutoencoderDet, UNetLite, load_checkpoint, save_checkpoint, sgd_step
from ecgq.net.checkpoint import CheckpointError, read_checkpoint
from ecgq.net.layers import AvgPool2, Conv2d, Linear, SiLU, Upsample2, timestep_embedding, truncated_normal
from ecgq.net.optim import NonFiniteGradient

TOL = 1e-3


def _layer_check(layer, x, seed=0):
    layer.astype(np.float64)
    rng = np.random.default_rng(seed)
    out = layer.forward(x)
    r = rng.standard_normal(out.shape)
    layer.zero_grad()
    gx = layer.backward(r)
    loss = lambda: float(np.sum(layer.forward(x) * r))  # noqa: E731
    worst = fd_check(loss, x, gx, probe(x, 12, seed))
    for name, p in layer.params.items():
        worst = max(worst, fd_check(loss, p, layer.grads[name], probe(p, 10, seed + 1)))
    return worst


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_gradients(stride):
    rng = np.random.default_rng(stride)
    conv = Conv2d(3, 5, rng, stride=stride)
    conv.params["bias"][:] = rng.standard_normal(5)
    assert _layer_check(conv, rng.standard_normal((2, 6, 8, 3))) < TOL


def test_conv_1x1_gradients():
    rng = np.random.default_rng(3)
    assert _layer_check(Conv2d(4, 2, rng, k=1), rng.standard_normal((2, 4, 4, 4))) < TOL


def test_conv_matches_direct_correlation():
    rng = np.random.default_rng(0)
    conv = Conv2d(2, 3, rng, stride=2).astype(np.float64)
    x = rng.standard_normal((1, 5, 6, 2))
    out = conv.forward(x)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    w = conv.params["weight"]
    ref = np.zeros((1, 3, 3, 3))
    for i in range(3):
        for j in range(3):
            patch = xp[0, 2 * i:2 * i + 3, 2 * j:2 * j + 3, :]
            ref[0, i, j] = np.einsum("abc,abcd->d", patch, w)
    np.testing.assert_allclose(out, ref, rtol=1e-12)


def test_linear_gradients():
    rng = np.random.default_rng(4)
    lin = Linear(6, 4, rng)
    lin.params["bias"][:] = rng.standard_normal(4)
    assert _layer_check(lin, rng.standard_normal((3, 6))) < TOL


@pytest.mark.parametrize("layer", [SiLU(), AvgPool2(), Upsample2()], ids=["silu", "avgpool", "upsample"])
def test_parameter_free_gradients(layer):
    x = np.random.default_rng(5).standard_normal((2, 4, 6, 3))
    assert _layer_check(layer, x) < TOL


def _net_check(net, run, x, seed=0):
    net.astype(np.float64)
    rng = np.random.default_rng(seed)
    r = rng.standard_normal(run(x).shape)
    net.zero_grad()
    run(x)
    gx = net.backward(r)
    loss = lambda: float(np.sum(run(x) * r))  # noqa: E731
    worst = fd_check(loss, x, gx, probe(x, 8, seed))
    grads = net.gradients()
    for i, (name, p) in enumerate(net.parameters().items()):
        worst = max(worst, fd_check(loss, p, grads[name], probe(p, 2, seed + i)))
    return worst


def test_unet_gradients():
    net = UNetLite(2, widths=(4, 6, 8), seed=1)
    for name, p in net.parameters().items():  # non-zero biases exercise every path
        if name.endswith("bias"):
            p[:] = np.random.default_rng(len(name)).standard_normal(p.shape) * 0.1
    x = np.random.default_rng(2).standard_normal((2, 2, 8, 12))
    t = np.array([3, 700])
    assert _net_check(net, lambda v: net.forward(v, t), x) < TOL


def test_autoencoder_gradients():
    ae = AutoencoderDet(widths=(4, 6), seed=2)
    x = np.random.default_rng(3).standard_normal((2, 1, 8, 16))
    assert _net_check(ae, ae.forward, x) < TOL


def test_unet_contract():
    net = UNetLite()
    assert net.n_params() < 1_500_000
    x = np.random.default_rng(0).uniform(-1, 1, (2, 1, 32, 256)).astype(np.float32)
    a = net(x, np.array([1, 500]))
    assert a.shape == x.shape
    assert a.tobytes() == net(x, np.array([1, 500])).tobytes()
    with pytest.raises(ValueError):
        net(np.zeros((1, 2, 32, 256)), 1)
    with pytest.raises(ValueError):
        net(x, 0)
    with pytest.raises(ValueError):
        net(x, 1001)


def test_embedding_injective():
    e = timestep_embedding(np.arange(1, 1001))
    assert e.shape == (1000, 64)
    d = np.linalg.norm(e[:, None] - e[None], axis=-1)
    assert np.all(d[~np.eye(1000, dtype=bool)] > 1e-3)


def test_autoencoder_contract():
    ae = AutoencoderDet(widths=(16, 32))
    x = np.random.default_rng(0).uniform(-1, 1, (1, 1, 32, 256))
    z = ae.encode(x)
    assert z.shape == (1, 4, 8, 64) and ae.latent_shape() == (4, 8, 64)
    assert z.tobytes() == ae.encode(x).tobytes()
    y = ae.decode(z)
    assert y.shape == x.shape and np.all(np.isfinite(y))
    with pytest.raises(ValueError):
        ae.decode(np.zeros((1, 3, 8, 64)))


def test_truncated_normal_bounds():
    v = truncated_normal(np.random.default_rng(0), (10000,), 0.02)
    assert np.all(np.abs(v) <= 0.04) and v.std() == pytest.approx(0.02 * 0.88, rel=0.05)


def test_sgd_zero_grad_is_noop():
    net = UNetLite(widths=(4, 4, 4))
    before = {k: v.copy() for k, v in net.parameters().items()}
    sgd_step(net, {k: np.zeros_like(v) for k, v in before.items()}, lr=0.1)
    for k, v in net.parameters().items():
        assert np.array_equal(v, before[k])


def test_sgd_linearity_without_momentum():
    a, b = UNetLite(widths=(4, 4, 4)), UNetLite(widths=(4, 4, 4))
    a.astype(np.float64)
    b.astype(np.float64)
    rng = np.random.default_rng(0)
    g1 = {k: rng.standard_normal(v.shape) for k, v in a.parameters().items()}
    g2 = {k: rng.standard_normal(v.shape) for k, v in a.parameters().items()}
    sgd_step(a, g1, lr=0.01, momentum=0.0)
    sgd_step(a, g2, lr=0.01, momentum=0.0)
    sgd_step(b, {k: g1[k] + g2[k] for k in g1}, lr=0.01, momentum=0.0)
    for k, v in a.parameters().items():
        np.testing.assert_allclose(v, b.parameters()[k], rtol=1e-12, atol=1e-15)


def test_sgd_momentum_and_clip():
    net = Linear(2, 1, np.random.default_rng(0))

    class One:
        def parameters(self):
            return {"w": net.params["weight"]}

    m = One()
    w0 = net.params["weight"].astype(np.float64).copy()
    vel = {"w": np.zeros_like(net.params["weight"])}
    g = {"w": np.array([[3.0, 4.0]], dtype=np.float32)}  # norm 5
    sgd_step(m, g, lr=0.1, momentum=0.9, velocity=vel, clip_norm=1.0)
    sgd_step(m, g, lr=0.1, momentum=0.9, velocity=vel, clip_norm=1.0)
    unit = np.array([[0.6, 0.8]])
    np.testing.assert_allclose(net.params["weight"], w0 - 0.1 * (1 + 1.9) * unit, rtol=1e-6)


def test_sgd_rejects_nonfinite():
    net = UNetLite(widths=(4, 4, 4))
    grads = {k: np.zeros_like(v) for k, v in net.parameters().items()}
    grads["mid.conv2.weight"][0, 0, 0, 0] = np.inf
    with pytest.raises(NonFiniteGradient, match="mid.conv2.weight"):
        sgd_step(net, grads)


def test_loss_halves_on_toy_batch():
    from ecgq.diffusion import build_schedule, diffusion_loss_and_grad

    sched = build_schedule()
    rng = np.random.default_rng(0)
    net = UNetLite(widths=(8, 16, 16), seed=0)
    x0 = np.clip(rng.normal(0, 0.3, (4, 1, 8, 32)) + np.linspace(-0.5, 0.5, 32), -1, 1)
    t = rng.integers(1, 1001, 4)
    eps = rng.standard_normal(x0.shape)
    opt = SGD(net, lr=0.05, momentum=0.9, clip_norm=1.0)
    losses = []
    for _ in range(200):
        net.zero_grad()
        losses.append(diffusion_loss_and_grad(net, x0, t, eps, sched))
        opt.step()
    assert losses[-1] <= 0.5 * losses[0]


def test_checkpoint_roundtrip(tmp_path):
    net = UNetLite(4, seed=3)
    p = save_checkpoint(net, tmp_path / "m.ckpt", meta={"training_seed": 3, "fingerprint": "ab"})
    back = load_checkpoint(p)
    assert isinstance(back, UNetLite) and back.in_channels == 4
    for k, v in net.parameters().items():
        assert back.parameters()[k].tobytes() == v.tobytes()
    x = np.random.default_rng(0).standard_normal((1, 4, 8, 64)).astype(np.float32)
    assert net(x, 5).tobytes() == back(x, 5).tobytes()
    assert back.meta["training_seed"] == 3
    ck = read_checkpoint(p)
    assert ck.kind == "unet_latent"
    p2 = save_checkpoint(back, tmp_path / "again.ckpt", meta=back.meta)
    assert read_checkpoint(p2).hyper_json == ck.hyper_json
    assert p2.read_bytes() == p.read_bytes()


def test_autoencoder_checkpoint_keeps_scale(tmp_path):
    ae = AutoencoderDet(widths=(16, 32), seed=1, latent_scale=0.37)
    back = load_checkpoint(save_checkpoint(ae, tmp_path / "ae.ckpt"))
    assert back.latent_scale == 0.37
    x = np.random.default_rng(0).uniform(-1, 1, (1, 1, 32, 256))
    assert back.encode(x).tobytes() == ae.encode(x).tobytes()


def test_checkpoint_refusals(tmp_path):
    p = save_checkpoint(AutoencoderDet(widths=(4, 4)), tmp_path / "a.ckpt")
    raw = bytearray(p.read_bytes())
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"XXXX1" + raw[5:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(bad)
    raw[5] = 9  # version
    bad.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(bad)
    bad.write_bytes(p.read_bytes()[:-7])
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)


def test_autoencoder_heldout_mae(toy_run):
    assert toy_run.ae_heldout_mae < 0.05


def test_training_reduces_loss(toy_run):
    for name, trace in toy_run.traces.items():
        k = 32
        assert np.mean(trace[-k:]) < np.mean(trace[:k]), name
