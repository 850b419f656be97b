"""Dependency-free SVG line charts with a log-scaled y axis."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=120, top=40, bottom=50)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f")
FLOOR = 1e-300


class PlotParseError(ValueError):
    pass


@dataclass
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None


def read_summary(path):
    """Parse an ``iter,median,q1,q3`` file into a :class:`Series`."""
    path = Path(path)
    xs, ys, lo, hi = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["iter", "median", "q1", "q3"]:
            raise PlotParseError(f"{path}: line 1: expected header iter,median,q1,q3, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise PlotParseError(f"{path}: line {lineno}: expected 4 fields, got {len(row)}")
            try:
                x, m, a, b = int(row[0]), float(row[1]), float(row[2]), float(row[3])
            except ValueError as exc:
                raise PlotParseError(f"{path}: line {lineno}: {exc}") from None
            xs.append(x)
            ys.append(m)
            lo.append(a)
            hi.append(b)
    label = path.stem
    if label.startswith("summary_"):
        label = label[len("summary_"):]
    return Series(label, np.array(xs), np.array(ys), np.array(lo), np.array(hi))


def _decades(values):
    vals = [v for v in values if v > 0 and math.isfinite(v)]
    if not vals:
        return 0, 1
    lo = math.floor(math.log10(max(min(vals), FLOOR)))
    hi = math.ceil(math.log10(max(vals)))
    if hi == lo:
        hi += 1
    return lo, hi


def render_svg(series, title="", xlabel="iteration", ylabel="relative MSE"):
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
    x0, y0 = MARGIN["left"], MARGIN["top"]

    allx = [float(v) for s in series for v in s.x]
    ally = [float(v) for s in series for arr in (s.y, s.lo, s.hi) if arr is not None for v in arr]
    xmin, xmax = (min(allx), max(allx)) if allx else (0.0, 1.0)
    if xmax == xmin:
        xmax = xmin + 1
    dlo, dhi = _decades(ally)

    def px(x):
        return x0 + (x - xmin) / (xmax - xmin) * pw

    def py(y):
        ly = math.log10(max(y, 10.0**dlo))
        return y0 + (dhi - ly) / (dhi - dlo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    step = max(1, (dhi - dlo + 7) // 8)
    for d in range(dlo, dhi + 1, step):
        y = py(10.0**d)
        out.append(f'<line x1="{x0}" y1="{y:.2f}" x2="{x0 + pw}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(
            f'<text class="ytick" x="{x0 - 6}" y="{y + 4:.2f}" text-anchor="end" font-family="sans-serif" font-size="11">1e{d}</text>'
        )
    for j in range(6):
        xv = xmin + j * (xmax - xmin) / 5
        out.append(
            f'<text class="xtick" x="{px(xv):.2f}" y="{y0 + ph + 16}" text-anchor="middle" font-family="sans-serif" font-size="11">{xv:g}</text>'
        )
    out.append(f'<text x="{x0 + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{y0 + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {y0 + ph / 2:.1f})">{escape(ylabel)}</text>'
    )
    for idx, s in enumerate(series):
        color = COLORS[idx % len(COLORS)]
        if len(s.x) == 0:
            continue
        if s.lo is not None and s.hi is not None and len(s.x) > 1:
            upper = [f"{px(x):.2f},{py(v):.2f}" for x, v in zip(s.x, s.hi)]
            lower = [f"{px(x):.2f},{py(v):.2f}" for x, v in zip(s.x[::-1], s.lo[::-1])]
            out.append(f'<polygon points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.15" stroke="none"/>')
        pts = " ".join(f"{px(x):.2f},{py(v):.2f}" for x, v in zip(s.x, s.y))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = y0 + 14 + 18 * idx
        out.append(f'<line x1="{x0 + pw + 10}" y1="{ly}" x2="{x0 + pw + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{x0 + pw + 34}" y="{ly + 4}" font-family="sans-serif" font-size="11">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot(summary_paths, title=""):
    return render_svg([read_summary(p) for p in summary_paths], title=title)
