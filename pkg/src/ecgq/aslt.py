"""Adaptive superlet transform and conversion to fixed-size model inputs."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import fft as sp_fft
from scipy import signal as sp_signal

GRID_ROWS, GRID_COLS = 32, 256
LOG_MIN, LOG_MAX = -8.0, 0.0
TRUNCATE_SIGMAS = 3.5


def round_half_away(v):
    """Round half away from zero (numpy's ``round`` is half-to-even)."""
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


@dataclass(frozen=True)
class AsltConfig:
    f_min: float = 0.5
    f_max: float = 40.0
    n_freq_bins: int = 64
    o_min: int = 1
    o_max: int = 16
    n0: float = 1.0
    k_sd: float = 5.0
    eps: float = 1e-12

    def __post_init__(self):
        if not 0 < self.f_min < self.f_max:
            raise ValueError("need 0 < f_min < f_max")
        if not 1 <= self.o_min <= self.o_max:
            raise ValueError("need 1 <= o_min <= o_max")
        if min(self.n0, self.k_sd, self.eps, self.n_freq_bins) <= 0:
            raise ValueError("n0, k_sd, eps and n_freq_bins must be positive")

    def freqs(self):
        return np.geomspace(self.f_min, self.f_max, self.n_freq_bins)


@dataclass(frozen=True)
class Scalogram:
    grid: np.ndarray   # (F, T) magnitudes
    freqs: np.ndarray  # Hz, increasing
    times: np.ndarray  # s
    fs: float


@dataclass(frozen=True)
class NormalizedScalogram:
    u8_grid: np.ndarray
    x: np.ndarray = field(repr=False)

    @classmethod
    def from_u8(cls, u8):
        u8 = np.asarray(u8, dtype=np.uint8)
        if u8.shape != (GRID_ROWS, GRID_COLS):
            raise ValueError(f"expected {GRID_ROWS}x{GRID_COLS} grid, got {u8.shape}")
        return cls(u8, u8_to_x(u8))


def u8_to_x(u8):
    return 2.0 * (np.asarray(u8, dtype=np.float64) / 255.0) - 1.0


def order_count(f, cfg=AsltConfig()):
    """Number of superlet orders used at frequency ``f``."""
    if not cfg.f_min <= f <= cfg.f_max:
        raise ValueError(f"frequency {f} outside [{cfg.f_min}, {cfg.f_max}] Hz")
    frac = (f - cfg.f_min) / (cfg.f_max - cfg.f_min)
    return int(cfg.o_min + round_half_away((cfg.o_max - cfg.o_min) * frac))


def morlet_sigma(f, k, cfg=AsltConfig()):
    return k * cfg.n0 / (cfg.k_sd * f)


def morlet_kernel(f, k, fs, cfg=AsltConfig()):
    """Complex Morlet wavelet of order ``k`` sampled at ``fs`` over +-3.5 sigma."""
    if k < 1:
        raise ValueError("order must be >= 1")
    if not cfg.f_min <= f <= cfg.f_max:
        raise ValueError(f"frequency {f} outside [{cfg.f_min}, {cfg.f_max}] Hz")
    sigma = morlet_sigma(f, k, cfg)
    half = int(math.floor(TRUNCATE_SIGMAS * sigma * fs))
    if 2 * half + 1 < 3:
        raise ValueError(f"kernel for f={f} Hz, k={k} spans <3 samples at fs={fs} Hz")
    t = np.arange(-half, half + 1) / fs
    return (np.exp(2j * np.pi * f * t - t ** 2 / (2 * sigma ** 2))
            / (sigma * math.sqrt(2 * math.pi)))


@lru_cache(maxsize=4096)
def _kernel_spectrum(f, k, fs, nfft, cfg):
    ker = morlet_kernel(f, k, fs, cfg)
    return sp_fft.fft(ker, nfft), ker.size


def _same_conv_fft(sig_spec, n, f, k, fs, nfft, cfg):
    kspec, klen = _kernel_spectrum(f, k, fs, nfft, cfg)
    full = sp_fft.ifft(sig_spec * kspec)
    off = (klen - 1) // 2
    return full[off:off + n]


def wavelet_response(s, f, k, cfg=AsltConfig(), fs=None, method="direct"):
    """|W_{f,k}(t)| for a record (or a bare array with ``fs``).

    Correlating with the conjugate wavelet equals convolving with the wavelet
    itself, because conj(psi(-t)) = psi(t).  Output has the input's length
    with zero padding at the edges; the sample interval scales the sum to
    approximate the integral.
    """
    x, fs = _samples_fs(s, fs)
    if method == "direct":
        ker = morlet_kernel(f, k, fs, cfg)
        w = sp_signal.convolve(x, ker, mode="same", method="direct")
    elif method == "fft":
        nfft = _nfft(x.size, fs, cfg)
        w = _same_conv_fft(sp_fft.fft(x, nfft), x.size, f, k, float(fs), nfft, cfg)
    else:
        raise ValueError(f"unknown method {method!r}")
    return math.sqrt(2.0) / fs * np.abs(w)


def _samples_fs(s, fs):
    if hasattr(s, "samples"):
        return np.asarray(s.samples, dtype=np.float64), s.fs
    if fs is None:
        raise ValueError("fs is required for bare arrays")
    return np.asarray(s, dtype=np.float64), fs


def _nfft(n, fs, cfg):
    # the widest kernel over the band is bounded by the largest k/f ratio
    widest = max(morlet_sigma(f, order_count(f, cfg), cfg) for f in cfg.freqs())
    widest = max(widest, morlet_sigma(cfg.f_min, 1, cfg))
    return sp_fft.next_fast_len(n + 2 * int(TRUNCATE_SIGMAS * widest * fs) + 1)


def aslt_scalogram(s, cfg=AsltConfig(), fs=None, method="fft"):
    """Adaptive superlet scalogram: per-frequency geometric mean over orders 1..K_f."""
    x, fs = _samples_fs(s, fs)
    if x.size / fs < 1.0:
        raise ValueError("signal must be at least 1 s long")
    freqs = cfg.freqs()
    grid = np.empty((freqs.size, x.size))
    if method == "fft":
        nfft = _nfft(x.size, fs, cfg)
        spec = sp_fft.fft(x, nfft)
    for row, f in enumerate(freqs):
        K = order_count(f, cfg)
        acc = np.zeros(x.size)
        for k in range(1, K + 1):
            if method == "fft":
                w = math.sqrt(2.0) / fs * np.abs(_same_conv_fft(spec, x.size, f, k, float(fs), nfft, cfg))
            else:
                w = wavelet_response(x, f, k, cfg, fs=fs, method=method)
            acc += np.log(w + cfg.eps)
        grid[row] = np.exp(acc / K)
    return Scalogram(grid, freqs, np.arange(x.size) / fs, float(fs))


@lru_cache(maxsize=64)
def area_weights(n_in, n_out):
    """(n_out, n_in) box-filter matrix averaging input cells by overlap."""
    edges = np.arange(n_out + 1) * (n_in / n_out)
    lo, hi = edges[:-1, None], edges[1:, None]
    i = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(i + 1, hi) - np.maximum(i, lo), 0.0, None)
    w = overlap / overlap.sum(axis=1, keepdims=True)
    w.setflags(write=False)
    return w


def resize_area(grid, rows=GRID_ROWS, cols=GRID_COLS):
    grid = np.asarray(grid, dtype=np.float64)
    return area_weights(grid.shape[0], rows) @ grid @ area_weights(grid.shape[1], cols).T


def log_power_to_u8(x_log):
    clipped = np.clip(x_log, LOG_MIN, LOG_MAX)
    return round_half_away(255.0 * (clipped - LOG_MIN) / (LOG_MAX - LOG_MIN)).astype(np.uint8)


def to_model_input(sc):
    """Resize to 32x256, convert to log power, clip to [-8, 0] and quantize."""
    mag = resize_area(sc.grid if hasattr(sc, "grid") else sc)
    with np.errstate(divide="ignore"):
        x_log = np.log10(np.abs(mag) ** 2)
    return NormalizedScalogram.from_u8(log_power_to_u8(x_log))


def from_model_output(x):
    """Map a [-1, 1] grid back to 0..255 integers."""
    x = np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0)
    return round_half_away(255.0 * (x + 1.0) / 2.0).astype(np.uint8)


def scalogram_input(s, cfg=AsltConfig()):
    """Record -> model-ready normalized scalogram."""
    return to_model_input(aslt_scalogram(s, cfg))


# ------------------------------------------------------------ SCAL1 files

SCAL_MAGIC = b"SCAL1"
_DTYPES = {0: np.dtype("u1"), 1: np.dtype("<f4")}


def write_scalogram(path, grid, freqs=None, times=None):
    """Write a SCAL1 grid (u8 or float32) plus a JSON sidecar of axes."""
    path = Path(path)
    grid = np.asarray(grid)
    tag = 0 if grid.dtype == np.uint8 else 1
    rows, cols = grid.shape
    with open(path, "wb") as fh:
        fh.write(SCAL_MAGIC + struct.pack("<IIB", rows, cols, tag))
        fh.write(np.ascontiguousarray(grid, dtype=_DTYPES[tag]).tobytes())
    side = {"freqs_hz": None if freqs is None else [float(f) for f in freqs],
            "times_s": None if times is None else [float(t) for t in times]}
    path.with_suffix(".json").write_text(json.dumps(side) + "\n")
    return path


def read_scalogram(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:5] != SCAL_MAGIC:
        raise ValueError(f"{path}: not a SCAL1 file")
    rows, cols, tag = struct.unpack_from("<IIB", raw, 5)
    if tag not in _DTYPES:
        raise ValueError(f"{path}: unknown dtype tag {tag}")
    dt = _DTYPES[tag]
    payload = raw[14:]
    if len(payload) != rows * cols * dt.itemsize:
        raise ValueError(f"{path}: truncated payload")
    grid = np.frombuffer(payload, dtype=dt).reshape(rows, cols).copy()
    side = path.with_suffix(".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    return grid, meta
