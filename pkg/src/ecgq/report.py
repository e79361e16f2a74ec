"""Report serialization: JSON with embedded CSV tables, plot CSVs and static SVG."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import platform
from html import escape
from pathlib import Path

import numpy as np

from . import __version__

SCORE_COLUMNS = ["segment_id", "label", "lambda", "sampler", "space", "psnr_db", "mae", "ssim"]
W1_COLUMNS = ["config", "kind", "metric", "w1", "n_clean", "n_noisy"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def reproducibility_block(config, seeds):
    """Config hash, seeds and library versions; no wall-clock fields."""
    return {"config_hash": config_hash(config), "seeds": seeds,
            "versions": {"ecgq": __version__, "numpy": np.__version__,
                         "python": platform.python_version()}}


def dump_json(doc, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n")
    return path


def write_csv(rows, columns, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(rows, columns))
    return path


def quality_report_doc(report, repro):
    return {"kind": "sweep", "reproducibility": repro, "chosen_configuration": report.chosen,
            "best_by_kind_metric": report.best, "thresholds": report.thresholds,
            "metadata": report.metadata,
            "tables": {"w1_csv": csv_text(report.w1, W1_COLUMNS),
                       "scores_csv": csv_text(report.rows, SCORE_COLUMNS)}}


def write_sweep_report(report, out_dir, repro, svg=False):
    out_dir = Path(out_dir)
    paths = [dump_json(quality_report_doc(report, repro), out_dir / "sweep_report.json"),
             write_csv(report.w1, W1_COLUMNS, out_dir / "w1_grid.csv"),
             write_csv(report.rows, SCORE_COLUMNS, out_dir / "scores.csv")]
    if svg:
        paths.append(svg_heatmap(report.w1, out_dir / "w1_grid.svg"))
    return paths


# ---------------------------------------------------------------------- SVG

def _color(v, lo, hi):
    f = 0.0 if hi <= lo else (v - lo) / (hi - lo)
    r, g, b = (int(round(255 * (1 - f))), int(round(255 * (1 - 0.6 * f))), 255)
    return f"#{r:02x}{g:02x}{b:02x}"


def svg_heatmap(cells, path, metric="psnr"):
    """Noise kinds x configurations heatmap of W1 for one metric."""
    cells = [c for c in cells if c["metric"] == metric]
    configs = list(dict.fromkeys(c["config"] for c in cells))
    kinds = list(dict.fromkeys(c["kind"] for c in cells))
    vals = [c["w1"] for c in cells if c["w1"] is not None]
    lo, hi = (min(vals), max(vals)) if vals else (0.0, 1.0)
    cw, ch, left, top = 90, 28, 110, 30
    w, h = left + cw * len(configs) + 10, top + ch * len(kinds) + 10
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="10">']
    for j, cfg in enumerate(configs):
        out.append(f'<text x="{left + cw * j + 4}" y="{top - 8}">{escape(cfg)}</text>')
    for i, kind in enumerate(kinds):
        out.append(f'<text x="4" y="{top + ch * i + 18}">{escape(kind)}</text>')
        for j, cfg in enumerate(configs):
            c = next(c for c in cells if c["kind"] == kind and c["config"] == cfg)
            x, y = left + cw * j, top + ch * i
            fill = "#dddddd" if c["w1"] is None else _color(c["w1"], lo, hi)
            label = "n/a" if c["w1"] is None else f"{c['w1']:.3f}"
            out.append(f'<rect x="{x}" y="{y}" width="{cw - 2}" height="{ch - 2}" fill="{fill}"/>')
            out.append(f'<text x="{x + 6}" y="{y + 17}">{label}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
    return Path(path)


def svg_line(xs, ys, path, threshold=None, width=640, height=200):
    """Static line plot of a PSNR series, with an optional threshold line."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    x0, x1 = (xs.min(), xs.max()) if xs.size else (0.0, 1.0)
    lo = min(ys.min() if ys.size else 0.0, threshold if threshold is not None else np.inf)
    hi = max(ys.max() if ys.size else 1.0, threshold if threshold is not None else -np.inf)
    pad = 30

    def px(x):
        return pad + (width - 2 * pad) * (0.5 if x1 == x0 else (x - x0) / (x1 - x0))

    def py(y):
        return height - pad - (height - 2 * pad) * (0.5 if hi == lo else (y - lo) / (hi - lo))

    pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">',
           f'<polyline fill="none" stroke="#1f4e9a" stroke-width="1.5" points="{pts}"/>']
    if threshold is not None:
        out.append(f'<line x1="{pad}" x2="{width - pad}" y1="{py(threshold):.2f}" y2="{py(threshold):.2f}" '
                   f'stroke="#c0392b" stroke-dasharray="4 3"/>')
    out.append(f'<text x="4" y="12">PSNR (dB) {lo:.1f}..{hi:.1f}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
    return Path(path)
