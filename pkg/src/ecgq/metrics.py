"""Reconstruction metrics on 0..255 grids and the 1-D Wasserstein-1 distance."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 8
MAX_VALUE = 255.0


class DegenerateInput(ValueError):
    pass


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mae(a, b):
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def mse(a, b):
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, cap=PSNR_CAP_DB):
    """Peak SNR in dB with peak 255; identical inputs report ``cap``."""
    m = mse(a, b)
    if m == 0.0:
        return float(cap)
    return float(min(cap, 10.0 * np.log10(MAX_VALUE ** 2 / m)))


def ssim(a, b, win=SSIM_WINDOW):
    """Mean SSIM over all ``win`` x ``win`` windows (stride 1, uniform weights).

    Local moments use population normalisation; C1 = (0.01*255)^2,
    C2 = (0.03*255)^2.
    """
    a, b = _pair(a, b)
    if a.ndim != 2 or min(a.shape) < win:
        raise ValueError(f"ssim needs 2-D grids at least {win}x{win}")
    c1, c2 = (0.01 * MAX_VALUE) ** 2, (0.03 * MAX_VALUE) ** 2

    def local_mean(v):
        return sliding_window_view(v, (win, win)).mean(axis=(-1, -2))

    mu_a, mu_b = local_mean(a), local_mean(b)
    var_a = np.maximum(local_mean(a * a) - mu_a ** 2, 0.0)
    var_b = np.maximum(local_mean(b * b) - mu_b ** 2, 0.0)
    cov = local_mean(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.clip(np.mean(num / den), -1.0, 1.0))


def score_pair(a, b):
    return {"psnr_db": psnr(a, b), "mae": mae(a, b), "ssim": ssim(a, b)}


# ------------------------------------------------------------- distributions

def standardize(p, q, mode="pooled"):
    """Shift/scale both samples to zero mean, unit variance.

    ``pooled`` uses the mean and (population) standard deviation of p and q
    together, preserving the offset between them; ``separate`` standardizes
    each sample by its own moments.
    """
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.size == 0 or q.size == 0:
        raise DegenerateInput("empty score distribution")
    if mode == "pooled":
        both = np.concatenate([p, q])
        if both.size < 2:
            raise DegenerateInput("need at least two pooled values")
        mu, sd = both.mean(), both.std()
        if not sd > 0:
            raise DegenerateInput("pooled variance is zero")
        return (p - mu) / sd, (q - mu) / sd
    if mode == "separate":
        out = []
        for v in (p, q):
            sd = v.std()
            if not sd > 0:
                raise DegenerateInput("zero variance within a distribution")
            out.append((v - v.mean()) / sd)
        return tuple(out)
    raise ValueError(f"unknown standardization mode {mode!r}")


def wasserstein1(p, q):
    """Empirical 1-D W1: sorted pairing for equal sizes, exact CDF integral otherwise."""
    p = np.sort(np.asarray(p, dtype=np.float64).ravel())
    q = np.sort(np.asarray(q, dtype=np.float64).ravel())
    if p.size == 0 or q.size == 0:
        raise DegenerateInput("W1 of an empty sample")
    if p.size == q.size:
        return float(np.mean(np.abs(p - q)))
    grid = np.concatenate([p, q])
    grid.sort(kind="mergesort")
    widths = np.diff(grid)
    cdf_p = np.searchsorted(p, grid[:-1], side="right") / p.size
    cdf_q = np.searchsorted(q, grid[:-1], side="right") / q.size
    return float(np.sum(np.abs(cdf_p - cdf_q) * widths))


def standardized_w1(p, q, mode="pooled"):
    return wasserstein1(*standardize(p, q, mode))
