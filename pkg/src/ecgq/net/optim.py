"""Plain SGD with momentum."""
from __future__ import annotations

import numpy as np


class NonFiniteGradient(FloatingPointError):
    pass


class SGD:
    """``v <- momentum * v + g``; ``p <- p - lr * v``.

    With ``momentum=0`` this is vanilla gradient descent.  Gradients may be
    clipped to a global L2 norm before the update.
    """

    def __init__(self, model, lr=1e-3, momentum=0.9, clip_norm=None):
        self.model = model
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity = {k: np.zeros_like(v) for k, v in model.parameters().items()}

    def step(self, grads=None):
        return sgd_step(self.model, self.model.gradients() if grads is None else grads,
                        self.lr, self.momentum, self.velocity, self.clip_norm)


def sgd_step(model, grads, lr=1e-3, momentum=0.9, velocity=None, clip_norm=None):
    """Apply one in-place update to ``model`` and return it."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in parameter tensor {name!r}")
    scale = 1.0
    if clip_norm is not None:
        norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
        if norm > clip_norm:
            scale = clip_norm / norm
    params = model.parameters()
    for name, g in grads.items():
        p = params[name]
        upd = g * p.dtype.type(scale)
        if velocity is not None and momentum:
            v = velocity[name]
            v *= p.dtype.type(momentum)
            v += upd
            upd = v
        p -= p.dtype.type(lr) * upd
    return model
