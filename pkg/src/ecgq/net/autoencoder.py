"""Deterministic convolutional autoencoder for the latent-space model."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .layers import Conv2d, Network, SiLU, Upsample2


class AutoencoderDet(Network):
    """1x32x256 grids <-> 4x8x64 latents through two stride-2 stages.

    ``latent_scale`` multiplies encoder outputs (and divides decoder inputs)
    so latents have roughly unit variance for the diffusion schedule; it is
    fitted once after pretraining by :func:`fit_latent_scale`.
    """

    kind = "autoencoder"

    def __init__(self, in_channels=1, latent_channels=4, widths=(32, 64), seed=0, latent_scale=1.0):
        self.in_channels = in_channels
        self.latent_channels = latent_channels
        self.widths = tuple(int(w) for w in widths)
        self.seed = seed
        self.latent_scale = float(latent_scale)
        rng = np.random.default_rng(seed)
        w1, w2 = self.widths
        self.e1 = Conv2d(in_channels, w1, rng, stride=2)
        self.e2 = Conv2d(w1, w1, rng)
        self.e3 = Conv2d(w1, w2, rng, stride=2)
        self.e4 = Conv2d(w2, w2, rng)
        self.e5 = Conv2d(w2, latent_channels, rng, k=1, std=np.sqrt(1.0 / w2))
        self.d1 = Conv2d(latent_channels, w2, rng)
        self.d2 = Conv2d(w2, w2, rng)
        self.d3 = Conv2d(w2, w1, rng)
        self.d4 = Conv2d(w1, w1, rng)
        self.d5 = Conv2d(w1, in_channels, rng, std=np.sqrt(1.0 / (9 * w1)))
        self._enc = [self.e1, SiLU(), self.e2, SiLU(), self.e3, SiLU(), self.e4, SiLU(), self.e5]
        self._dec = [self.d1, SiLU(), self.d2, SiLU(), Upsample2(), self.d3, SiLU(),
                     Upsample2(), self.d4, SiLU(), self.d5]

    def hyperparameters(self):
        return {"in_channels": self.in_channels, "latent_channels": self.latent_channels,
                "widths": list(self.widths), "seed": self.seed, "latent_scale": self.latent_scale}

    def named_layers(self):
        return OrderedDict((n, getattr(self, n)) for n in
                           ("e1", "e2", "e3", "e4", "e5", "d1", "d2", "d3", "d4", "d5"))

    def latent_shape(self, h=32, w=256):
        return (self.latent_channels, h // 4, w // 4)

    @staticmethod
    def _run(layers, x):
        for layer in layers:
            x = layer.forward(x)
        return x

    @staticmethod
    def _back(layers, g):
        for layer in reversed(layers):
            g = layer.backward(g)
        return g

    def _check(self, x, c):
        if x.ndim != 4 or x.shape[1] != c or x.shape[2] % 4 or x.shape[3] % 4:
            raise ValueError(f"input shape {x.shape} incompatible with {c}-channel autoencoder stage")

    def encode(self, x):
        """(N, 1, H, W) -> (N, 4, H/4, W/4), scaled by ``latent_scale``."""
        x = np.asarray(x)
        self._check(x, self.in_channels)
        z = self._run(self._enc, x.astype(self.dtype).transpose(0, 2, 3, 1))
        return np.ascontiguousarray(z.transpose(0, 3, 1, 2)) * self.dtype.type(self.latent_scale)

    def decode(self, z):
        z = np.asarray(z)
        if z.ndim != 4 or z.shape[1] != self.latent_channels:
            raise ValueError(f"latent shape {z.shape} incompatible with autoencoder")
        h = (z.astype(self.dtype) / self.dtype.type(self.latent_scale)).transpose(0, 2, 3, 1)
        return np.ascontiguousarray(self._run(self._dec, h).transpose(0, 3, 1, 2))

    def reconstruct(self, x):
        return self.decode(self.encode(x))

    def forward(self, x):
        """Unscaled encode -> decode used during pretraining (caches for backward)."""
        self._check(np.asarray(x), self.in_channels)
        h = np.asarray(x, dtype=self.dtype).transpose(0, 2, 3, 1)
        return np.ascontiguousarray(self._run(self._enc + self._dec, h).transpose(0, 3, 1, 2))

    def backward(self, g):
        g = np.ascontiguousarray(np.asarray(g, dtype=self.dtype).transpose(0, 2, 3, 1))
        return self._back(self._enc + self._dec, g).transpose(0, 3, 1, 2)


def fit_latent_scale(ae, x, batch=64):
    """Set ``latent_scale`` so encoded ``x`` has unit standard deviation."""
    ae.latent_scale = 1.0
    zs = [ae.encode(x[i:i + batch]) for i in range(0, len(x), batch)]
    sd = float(np.concatenate(zs).astype(np.float64).std())
    ae.latent_scale = 1.0 / sd if sd > 0 else 1.0
    return ae.latent_scale
