"""Signal records: ingestion, synthesis, noise injection, resampling, segmentation."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NOISE_KINDS = ("static", "burst", "baseline_drift")
LABELS = ("clean",) + NOISE_KINDS
POWERLINE_HZ = 50.0


class ParseError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, msg, line=None):
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.line = line


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SignalRecord:
    samples: np.ndarray
    fs: float
    channel: str = "ECG"
    labels: frozenset = field(default_factory=frozenset)
    seed: int | None = None
    record_id: str = ""

    def __post_init__(self):
        s = _frozen(self.samples)
        if s.ndim != 1 or s.size == 0:
            raise ValueError("samples must be a non-empty 1-D sequence")
        bad = np.flatnonzero(~np.isfinite(s))
        if bad.size:
            raise ValueError(f"non-finite sample at index {bad[0]}")
        if not self.fs > 0:
            raise ValueError(f"fs must be positive, got {self.fs}")
        labels = frozenset(self.labels)
        unknown = labels - set(LABELS)
        if unknown:
            raise ValueError(f"unknown labels {sorted(unknown)}")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "fs", float(self.fs))
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.fs

    @property
    def is_clean(self):
        return self.labels == frozenset({"clean"})


@dataclass(frozen=True)
class Segment:
    parent_id: str
    start: int
    duration: float
    samples: np.ndarray
    fs: float
    labels: frozenset = field(default_factory=frozenset)

    @property
    def segment_id(self):
        return f"{self.parent_id}:{self.start}"

    def to_record(self):
        return SignalRecord(self.samples, self.fs, labels=self.labels, record_id=self.segment_id)


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    snr_db: float
    burst: tuple[float, float] | None = None  # (start_s, len_s)
    drift_hz: float = 0.3
    powerline_fraction: float = 0.2

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"noise kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        if self.kind == "burst" and self.burst is None:
            raise ValueError("burst noise needs a (start_s, len_s) window")
        if self.kind == "baseline_drift" and not 0 < self.drift_hz < 0.5:
            raise ValueError("drift frequency must lie in (0, 0.5) Hz")


# ---------------------------------------------------------------- ingestion

def _read_sidecar(path):
    side = Path(path).with_suffix(".json")
    if not side.exists():
        return {}
    with open(side) as fh:
        return json.load(fh)


def ingest_record(path, fmt=None, fs=None, channel=None):
    """Read a record from CSV or little-endian float32 with a JSON sidecar.

    CSV rows are ``value`` or ``time_s,value``; a header line is optional.
    The sampling rate comes from ``fs``, the sidecar, or (CSV with a time
    column) the span of the time column, in that order.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if fmt is None:
        fmt = "raw" if path.suffix == ".f32le" else "csv"
    meta = _read_sidecar(path)
    fs = fs if fs is not None else meta.get("fs")
    labels = frozenset(meta.get("labels", []))
    kw = dict(channel=channel or meta.get("channel", "ECG"), labels=labels,
              seed=meta.get("seed"), record_id=meta.get("id", path.stem))

    if fmt == "raw":
        if fs is None:
            raise ParseError(f"{path.name}: sidecar must declare fs")
        samples = np.fromfile(path, dtype="<f4").astype(np.float64)
        if samples.size == 0:
            raise ParseError(f"{path.name}: empty payload")
        bad = np.flatnonzero(~np.isfinite(samples))
        if bad.size:
            raise ParseError(f"non-finite sample at index {bad[0]}")
        return SignalRecord(samples, fs, **kw)

    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    times, values = [], []
    ncols = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                nums = [float(c) for c in row]
            except ValueError:
                if lineno == 1 and ncols is None:
                    continue  # header
                raise ParseError(f"cannot parse {row!r}", lineno) from None
            if ncols is None:
                ncols = len(nums)
                if ncols not in (1, 2):
                    raise ParseError(f"expected 1 or 2 columns, got {ncols}", lineno)
            elif len(nums) != ncols:
                raise ParseError(f"expected {ncols} columns, got {len(nums)}", lineno)
            if not all(math.isfinite(v) for v in nums):
                raise ParseError(f"non-finite value at sample index {len(values)}", lineno)
            if ncols == 2:
                times.append(nums[0])
            values.append(nums[-1])
    if not values:
        raise ParseError(f"{path.name}: no samples")
    if fs is None:
        if len(times) < 2:
            raise ParseError(f"{path.name}: sampling rate unknown (no fs and no time column)")
        dt = np.diff(times)
        if np.any(dt <= 0):
            raise ParseError(f"{path.name}: time column must increase strictly")
        # whole-span estimate, rounded to shed decimal-to-binary error
        fs = round((len(times) - 1) / (times[-1] - times[0]), 6)
    return SignalRecord(np.array(values), fs, **kw)


def write_raw(record, path):
    """Write ``<name>.f32le`` and its ``<name>.json`` sidecar."""
    path = Path(path).with_suffix(".f32le")
    path.parent.mkdir(parents=True, exist_ok=True)
    record.samples.astype("<f4").tofile(path)
    meta = {"fs": record.fs, "channel": record.channel,
            "labels": sorted(record.labels), "seed": record.seed, "id": record.record_id}
    path.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    return path


def write_csv(record, path, with_time=True):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if with_time:
            w.writerow(["time_s", "value"])
            for i, v in enumerate(record.samples):
                w.writerow([repr(i / record.fs), repr(float(v))])
        else:
            w.writerow(["value"])
            w.writerows([[repr(float(v))] for v in record.samples])
    return path


# --------------------------------------------------------- transformations

def resample(record, target_fs):
    """Linear-interpolation resampling to ``target_fs``."""
    if not target_fs > 0:
        raise ValueError(f"target_fs must be positive, got {target_fs}")
    n_out = int(round(len(record) * target_fs / record.fs))
    t_in = np.arange(len(record)) / record.fs
    t_out = np.arange(n_out) / target_fs
    out = np.interp(t_out, t_in, record.samples)
    return SignalRecord(out, target_fs, record.channel, record.labels, record.seed, record.record_id)


def segment(record, window_s=10.0, hop_s=None):
    """Cut ``record`` into fixed windows; a short trailing remainder is dropped."""
    hop_s = window_s if hop_s is None else hop_s
    win = int(round(window_s * record.fs))
    hop = int(round(hop_s * record.fs))
    if win < 1 or hop < 1:
        raise ValueError("window and hop must span at least one sample")
    out = []
    for start in range(0, len(record) - win + 1, hop):
        out.append(Segment(record.record_id, start, win / record.fs,
                           record.samples[start:start + win], record.fs, record.labels))
    return out


# --------------------------------------------------------------- synthesis

# (offset_s relative to R, amplitude mV, width_s) for P, Q, R, S, T
PQRST = (
    (-0.20, 0.15, 0.025),
    (-0.035, -0.12, 0.010),
    (0.0, 1.00, 0.012),
    (0.035, -0.25, 0.010),
    (0.28, 0.30, 0.060),
)


def synth_clean(hr_bpm, fs=500.0, dur_s=10.0, seed=0, record_id=None):
    """Synthetic clean ECG built from five Gaussian bumps per beat.

    Per-beat jitter: RR interval 2 %, amplitudes 5 %, offsets 4 ms.  P and T
    offsets scale with sqrt(RR) so morphology stays plausible at high rates.
    """
    if not 30 <= hr_bpm <= 200:
        raise ValueError(f"hr_bpm must be within [30, 200], got {hr_bpm}")
    rng = np.random.default_rng(seed)
    n = int(round(dur_s * fs))
    t = np.arange(n) / fs
    rr = 60.0 / hr_bpm
    gain = 1.0 + 0.1 * rng.uniform(-1, 1)
    x = np.zeros(n)
    beat = rng.uniform(0.0, rr) - rr
    while beat < dur_s + rr:
        rr_k = rr * (1.0 + 0.02 * rng.standard_normal())
        stretch = math.sqrt(rr_k)
        for i, (off, amp, width) in enumerate(PQRST):
            off = off * stretch if i in (0, 4) else off
            c = beat + off + 0.004 * rng.standard_normal()
            a = gain * amp * (1.0 + 0.05 * rng.standard_normal())
            lo, hi = np.searchsorted(t, [c - 5 * width, c + 5 * width])
            x[lo:hi] += a * np.exp(-0.5 * ((t[lo:hi] - c) / width) ** 2)
        beat += rr_k
    rid = record_id if record_id is not None else f"synth-{seed}"
    return SignalRecord(x, fs, labels={"clean"}, seed=seed, record_id=rid)


def count_r_peaks(samples, fs, rel_threshold=0.6, refractory_s=0.2):
    """Crude R-peak counter: local maxima above ``rel_threshold * max``."""
    x = np.asarray(samples)
    thr = rel_threshold * x.max()
    idx = np.flatnonzero((x[1:-1] > thr) & (x[1:-1] >= x[:-2]) & (x[1:-1] > x[2:])) + 1
    peaks, last = [], -np.inf
    for i in idx:
        if i - last >= refractory_s * fs:
            peaks.append(i)
            last = i
    return len(peaks)


def inject_noise(record, spec, seed):
    """Add calibrated noise of ``spec.kind`` to a clean record.

    The noise is scaled so the SNR over the affected support (whole record,
    or the burst window) equals ``spec.snr_db``.
    """
    if not record.is_clean:
        raise ValueError("noise can only be injected into clean-labelled records")
    rng = np.random.default_rng(seed)
    n, fs = len(record), record.fs
    t = np.arange(n) / fs
    support = slice(0, n)
    if spec.kind == "static":
        white = rng.standard_normal(n)
        line = np.sin(2 * np.pi * POWERLINE_HZ * t + rng.uniform(0, 2 * np.pi))
        pf = spec.powerline_fraction
        noise = math.sqrt(1 - pf) * white / white.std() + math.sqrt(2 * pf) * line
    elif spec.kind == "burst":
        start_s, len_s = spec.burst
        lo, hi = int(round(start_s * fs)), int(round((start_s + len_s) * fs))
        if start_s < 0 or len_s <= 0 or hi > n or hi - lo < 1:
            raise ValueError(f"burst window {spec.burst} outside the {record.duration:g} s record")
        support = slice(lo, hi)
        noise = np.zeros(n)
        noise[lo:hi] = rng.standard_normal(hi - lo)
    else:
        noise = np.sin(2 * np.pi * spec.drift_hz * t + rng.uniform(0, 2 * np.pi))
    p_sig = np.mean(record.samples[support] ** 2)
    p_noise = np.mean(noise[support] ** 2)
    noise *= math.sqrt(p_sig / (p_noise * 10 ** (spec.snr_db / 10)))
    return SignalRecord(record.samples + noise, fs, record.channel, {spec.kind}, seed, record.record_id)


def realized_snr_db(clean, noisy, support=slice(None)):
    s = np.asarray(clean)[support]
    e = np.asarray(noisy)[support] - s
    return 10 * np.log10(np.mean(s ** 2) / np.mean(e ** 2))
