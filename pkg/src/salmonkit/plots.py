"""Plot-ready data files (CSV, optional static SVG) from reports."""

from __future__ import annotations

import math
from html import escape
from pathlib import Path

import numpy as np

from . import MODALITIES
from .io import atomic_write_bytes, atomic_write_csv

METRIC_COLUMNS = {
    "auprc": list(MODALITIES) + ["combined", "binary"],
    "mae": list(MODALITIES) + ["combined"],
    "tau": list(MODALITIES) + ["combined"],
}

CHAR_HISTOGRAMS = {
    "saliency_et": ("s_et", (0.0, 1.0)),
    "saliency_pc": ("s_pc", (0.0, 1.0)),
    "saliency_rd": ("s_rd", (0.0, 1.0)),
    "color_entropy": ("entropy", None),
    "center_distance": ("geometry.norm_center_dist", (0.0, 0.5 * math.sqrt(2))),
    "width": ("geometry.width_norm", (0.0, 1.0)),
    "height": ("geometry.height_norm", (0.0, 1.0)),
    "aspect_ratio": ("geometry.aspect_ratio", None),
    "area": ("geometry.area_norm", (0.0, 1.0)),
    "local_contrast": ("local_contrast", (0.0, 1.0)),
    "global_contrast": ("global_contrast", (0.0, 1.0)),
}


def _get(d, dotted):
    for part in dotted.split("."):
        if d is None:
            return None
        d = d.get(part)
    return d


def _metric_rows(detectors, metric):
    rows = []
    for det in detectors:
        summary = det.get("summary", {})
        vals = summary.get(metric, {}) or {}
        row = [det["detector"]]
        for col in METRIC_COLUMNS[metric]:
            row.append(summary.get("binary_auprc") if col == "binary" else vals.get(col))
        rows.append(row)
    return rows


def histogram(values, bins, value_range=None):
    vals = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if value_range is None:
        value_range = (float(vals.min()), float(vals.max())) if vals.size else (0.0, 1.0)
        if value_range[0] == value_range[1]:
            value_range = (value_range[0], value_range[0] + 1.0)
    counts, edges = np.histogram(vals, bins=bins, range=value_range)
    return counts, edges


def emit_plot_data(report: dict, out_dir, stamp: dict, bins=20, svg=False) -> list:
    """Write one CSV per figure family found in ``report``.

    ``report`` is a metrics report (``{"detectors": [...]}``) or a
    characterisation report (``{"objects": [...]}``). Returns written paths.
    """
    out_dir = Path(out_dir)
    written = []
    if "detectors" in report:
        dets = report["detectors"]
        for metric, cols in METRIC_COLUMNS.items():
            rows = _metric_rows(dets, metric)
            path = out_dir / f"{metric}.csv"
            atomic_write_csv(path, ["detector"] + cols, rows, stamp)
            written.append(path)
            if svg:
                path = out_dir / f"{metric}.svg"
                atomic_write_bytes(path, bar_chart_svg(metric, cols, rows, stamp).encode("utf-8"))
                written.append(path)
    if "objects" in report:
        objects = report["objects"]
        per_image = report.get("objects_per_image", {})
        counts = sorted(per_image.values())
        hist_rows = [[k, counts.count(k)] for k in sorted(set(counts))]
        path = out_dir / "objects_per_image.csv"
        atomic_write_csv(path, ["n_objects", "n_images"], hist_rows, stamp)
        written.append(path)
        for name, (field, rng) in CHAR_HISTOGRAMS.items():
            c, edges = histogram([_get(o, field) for o in objects], bins, rng)
            rows = [[edges[i], edges[i + 1], int(c[i])] for i in range(len(c))] if objects else []
            path = out_dir / f"hist_{name}.csv"
            atomic_write_csv(path, ["bin_lo", "bin_hi", "count"], rows, stamp)
            written.append(path)
            if svg:
                path = out_dir / f"hist_{name}.svg"
                atomic_write_bytes(path, histogram_svg(name, rows, stamp).encode("utf-8"))
                written.append(path)
        path = out_dir / "object_colors.csv"
        atomic_write_csv(path, ["image_id", "object_id", "L", "a", "b"],
                         [[o["image_id"], o["object_id"], *o["mean_lab"]] for o in objects], stamp)
        written.append(path)
        fits = report.get("gamma_fits", {})
        path = out_dir / "gamma_fits.csv"
        atomic_write_csv(path, ["pair", "g", "r_squared", "n"],
                         [[k, v.get("g"), v.get("r_squared"), v.get("n")] for k, v in fits.items()], stamp)
        written.append(path)
    return written


def _svg_open(w, h, title, stamp):
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
            f"<!-- {stamp['toolkit']} {stamp['version']} config_hash={stamp['config_hash']} -->",
            f'<text x="{w / 2}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>']


def bar_chart_svg(title, cols, rows, stamp) -> str:
    """Grouped bars: one group per column, one bar per detector."""
    w, h, pad = 120 + 90 * len(cols), 260, 30
    out = _svg_open(w, h, title, stamp)
    vals = [v for r in rows for v in r[1:] if isinstance(v, (int, float)) and math.isfinite(v)]
    lo, hi = min(vals + [0.0]), max(vals + [1e-9])
    span = hi - lo
    base = h - pad - (0 - lo) / span * (h - 2 * pad)
    out.append(f'<line x1="{pad}" y1="{base:.1f}" x2="{w - pad}" y2="{base:.1f}" stroke="black"/>')
    group = (w - 2 * pad) / max(len(cols), 1)
    bw = group / (len(rows) + 1) if rows else group
    for gi, col in enumerate(cols):
        gx = pad + gi * group
        out.append(f'<text x="{gx + group / 2:.1f}" y="{h - 8}" text-anchor="middle" font-size="11">{escape(col)}</text>')
        for ri, row in enumerate(rows):
            v = row[gi + 1]
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                continue
            y = h - pad - (v - lo) / span * (h - 2 * pad)
            top, height = min(y, base), abs(base - y)
            shade = 40 + int(160 * ri / max(len(rows), 1))
            out.append(f'<rect x="{gx + (ri + 0.5) * bw:.1f}" y="{top:.1f}" width="{bw * 0.9:.1f}" '
                       f'height="{height:.1f}" fill="rgb({shade},{shade},200)">'
                       f"<title>{escape(str(row[0]))}: {v:.4f}</title></rect>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def histogram_svg(title, rows, stamp) -> str:
    w, h, pad = 420, 240, 30
    out = _svg_open(w, h, title, stamp)
    peak = max([r[2] for r in rows] + [1])
    bw = (w - 2 * pad) / max(len(rows), 1)
    for i, (_, _, c) in enumerate(rows):
        bh = c / peak * (h - 2 * pad)
        out.append(f'<rect x="{pad + i * bw:.1f}" y="{h - pad - bh:.1f}" width="{bw * 0.95:.1f}" '
                   f'height="{bh:.1f}" fill="steelblue"/>')
    out.append(f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
