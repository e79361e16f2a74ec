"""Layer primitives with hand-written backward passes.

Every layer follows the same small protocol: ``forward`` caches whatever the
backward pass needs, ``backward`` takes dL/d(output), accumulates parameter
gradients into ``self.grads`` and returns dL/d(input).
The layers are dtype-agnostic: they compute in the dtype of their parameters,
which lets the gradient checks run the same code in float64.
Internally everything is channels-last (NHWC); models convert at their edges.
"""
from __future__ import annotations

from collections import OrderedDict

import numpy as np


def truncated_normal(rng, shape, std, dtype=np.float32):
    """Normal(0, std) samples redrawn until they fall within two std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(dtype)


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def astype(self, dtype):
        for k in self.params:
            self.params[k] = self.params[k].astype(dtype)
        self.zero_grad()
        return self


class Conv2d(Layer):
    """k x k convolution (cross-correlation) with zero padding and stride.

    Operates on NHWC arrays; weight layout is (k, k, C_in, C_out).
    """

    def __init__(self, c_in, c_out, rng, k=3, stride=1, std=None):
        super().__init__()
        self.c_in, self.c_out, self.k, self.stride = c_in, c_out, k, stride
        self.pad = k // 2
        if std is None:
            std = np.sqrt(2.0 / (c_in * k * k))
        self.params["weight"] = truncated_normal(rng, (k, k, c_in, c_out), std)
        self.params["bias"] = np.zeros(c_out, dtype=np.float32)
        self.zero_grad()

    def out_hw(self, h, w):
        s, p, k = self.stride, self.pad, self.k
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x):
        n, h, w, c = x.shape
        if c != self.c_in:
            raise ValueError(f"conv expects {self.c_in} channels, got {c}")
        k, s, p = self.k, self.stride, self.pad
        ho, wo = self.out_hw(h, w)
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        wt = self.params["weight"]
        out = np.empty((n, ho, wo, self.c_out), dtype=wt.dtype)
        out[...] = self.params["bias"]
        for i in range(k):
            for j in range(k):
                out += xp[:, i:i + s * ho:s, j:j + s * wo:s, :] @ wt[i, j]
        self._cache = (xp, x.shape, ho, wo)
        return out

    def backward(self, g):
        xp, xshape, ho, wo = self._cache
        n, h, w, c = xshape
        k, s, p = self.k, self.stride, self.pad
        wt = self.params["weight"]
        g2 = g.reshape(-1, self.c_out)
        gw = self.grads["weight"]
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                xs = xp[:, i:i + s * ho:s, j:j + s * wo:s, :].reshape(-1, c)
                gw[i, j] += xs.T @ g2
                dxp[:, i:i + s * ho:s, j:j + s * wo:s, :] += g @ wt[i, j].T
        self.grads["bias"] += g2.sum(axis=0)
        self._cache = None
        return dxp[:, p:p + h, p:p + w, :] if p else dxp


class Linear(Layer):
    def __init__(self, d_in, d_out, rng, std=None):
        super().__init__()
        if std is None:
            std = np.sqrt(1.0 / d_in)
        self.params["weight"] = truncated_normal(rng, (d_out, d_in), std)
        self.params["bias"] = np.zeros(d_out, dtype=np.float32)
        self.zero_grad()

    def forward(self, x):
        self._x = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, g):
        self.grads["weight"] += g.T @ self._x
        self.grads["bias"] += g.sum(axis=0)
        return g @ self.params["weight"]


class SiLU(Layer):
    def forward(self, x):
        sig = 1.0 / (1.0 + np.exp(-x))
        self._cache = (x, sig)
        return x * sig

    def backward(self, g):
        x, sig = self._cache
        self._cache = None
        return g * sig * (1.0 + x * (1.0 - sig))


class AvgPool2(Layer):
    def forward(self, x):
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"AvgPool2 needs even spatial dims, got {h}x{w}")
        return x.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))

    def backward(self, g):
        return 0.25 * np.repeat(np.repeat(g, 2, axis=1), 2, axis=2)


class Upsample2(Layer):
    """Nearest-neighbour 2x upsampling."""

    def forward(self, x):
        return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)

    def backward(self, g):
        n, h, w, c = g.shape
        return g.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


class Network:
    """Parameter bookkeeping shared by the fixed-architecture models.

    Subclasses implement ``named_layers`` returning an ordered name -> layer map.
    """

    def named_layers(self):
        raise NotImplementedError

    def parameters(self):
        return OrderedDict((f"{ln}.{pn}", layer.params[pn])
                           for ln, layer in self.named_layers().items() for pn in layer.params)

    def gradients(self):
        return OrderedDict((f"{ln}.{pn}", layer.grads[pn])
                           for ln, layer in self.named_layers().items() for pn in layer.params)

    def set_parameter(self, name, value):
        ln, pn = name.rsplit(".", 1)
        layer = self.named_layers()[ln]
        if layer.params[pn].shape != value.shape:
            raise ValueError(f"shape mismatch for {name}: {layer.params[pn].shape} vs {value.shape}")
        layer.params[pn] = value

    def zero_grad(self):
        for layer in self.named_layers().values():
            layer.zero_grad()

    def astype(self, dtype):
        for layer in self.named_layers().values():
            layer.astype(dtype)
        return self

    @property
    def dtype(self):
        return next(iter(self.parameters().values())).dtype

    def n_params(self):
        return sum(p.size for p in self.parameters().values())


def timestep_embedding(t, dim=64, max_period=10000.0):
    """Sinusoidal embedding of integer steps; ``t`` is a 1-D int array."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
