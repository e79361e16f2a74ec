"""Compact timestep-conditioned U-Net used as the noise predictor."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .layers import AvgPool2, Conv2d, Linear, Network, SiLU, Upsample2, timestep_embedding

EMBED_DIM = 64


class Block:
    """conv -> +time bias -> SiLU -> conv -> SiLU."""

    def __init__(self, c_in, c_out, rng):
        self.conv1 = Conv2d(c_in, c_out, rng)
        self.temb = Linear(EMBED_DIM, c_out, rng)
        self.act1 = SiLU()
        self.conv2 = Conv2d(c_out, c_out, rng)
        self.act2 = SiLU()

    def layers(self):
        return {"conv1": self.conv1, "temb": self.temb, "conv2": self.conv2}

    def forward(self, x, emb):
        h = self.conv1.forward(x) + self.temb.forward(emb)[:, None, None, :]
        h = self.act1.forward(h)
        return self.act2.forward(self.conv2.forward(h))

    def backward(self, g):
        g = self.conv2.backward(self.act2.backward(g))
        g = self.act1.backward(g)
        self.temb.backward(g.sum(axis=(1, 2)))
        return self.conv1.backward(g)


class UNetLite(Network):
    """Three-level U-Net predicting the noise component of ``x_t``.

    Channel widths default to (16, 32, 64).  Spatial dims must be divisible
    by 4 (two 2x poolings).  Skip connections concatenate encoder features
    onto the upsampled decoder path.
    """

    kind = "unet"

    def __init__(self, in_channels=1, widths=(16, 32, 64), seed=0, n_steps=1000):
        self.in_channels = in_channels
        self.widths = tuple(int(w) for w in widths)
        self.seed = seed
        self.n_steps = n_steps
        rng = np.random.default_rng(seed)
        c1, c2, c3 = self.widths
        self.enc1 = Block(in_channels, c1, rng)
        self.enc2 = Block(c1, c2, rng)
        self.mid = Block(c2, c3, rng)
        self.dec2 = Block(c3 + c2, c2, rng)
        self.dec1 = Block(c2 + c1, c1, rng)
        self.out = Conv2d(c1, in_channels, rng, k=1, std=0.02)
        self.pool1, self.pool2 = AvgPool2(), AvgPool2()
        self.up2, self.up1 = Upsample2(), Upsample2()

    def hyperparameters(self):
        return {"in_channels": self.in_channels, "widths": list(self.widths),
                "seed": self.seed, "n_steps": self.n_steps, "embed_dim": EMBED_DIM}

    def named_layers(self):
        out = OrderedDict()
        for name in ("enc1", "enc2", "mid", "dec2", "dec1"):
            for sub, layer in getattr(self, name).layers().items():
                out[f"{name}.{sub}"] = layer
        out["out"] = self.out
        return out

    def _check(self, x, t):
        if x.ndim != 4 or x.shape[1] != self.in_channels or x.shape[2] % 4 or x.shape[3] % 4:
            raise ValueError(f"input shape {x.shape} incompatible with UNetLite(in_channels={self.in_channels})")
        t = np.broadcast_to(np.asarray(t, dtype=np.int64), (x.shape[0],))
        if t.min() < 1 or t.max() > self.n_steps:
            raise ValueError(f"timestep out of range 1..{self.n_steps}")
        return t

    def forward(self, x, t):
        """Predict noise for a batch ``x`` of shape (N, C, H, W) at steps ``t``."""
        t = self._check(x, t)
        x = np.asarray(x, dtype=self.dtype).transpose(0, 2, 3, 1)
        emb = timestep_embedding(t, EMBED_DIM).astype(self.dtype)
        h1 = self.enc1.forward(x, emb)
        h2 = self.enc2.forward(self.pool1.forward(h1), emb)
        h3 = self.mid.forward(self.pool2.forward(h2), emb)
        u2 = self.up2.forward(h3)
        d2 = self.dec2.forward(np.concatenate([u2, h2], axis=3), emb)
        u1 = self.up1.forward(d2)
        d1 = self.dec1.forward(np.concatenate([u1, h1], axis=3), emb)
        return np.ascontiguousarray(self.out.forward(d1).transpose(0, 3, 1, 2))

    __call__ = forward

    def backward(self, g):
        c1, c2, c3 = self.widths
        g = self.out.backward(np.ascontiguousarray(g.astype(self.dtype).transpose(0, 2, 3, 1)))
        g = self.dec1.backward(g)
        g_u1, g_h1 = g[..., :c2], g[..., c2:]
        g = self.up1.backward(g_u1)
        g = self.dec2.backward(g)
        g_u2, g_h2 = g[..., :c3], g[..., c3:]
        g = self.mid.backward(self.up2.backward(g_u2))
        g_h2 = g_h2 + self.pool2.backward(g)
        g = self.enc2.backward(g_h2)
        g_h1 = g_h1 + self.pool1.backward(g)
        return self.enc1.backward(g_h1).transpose(0, 3, 1, 2)

