"""Minimal SVG charts (line curves and box plots) with no plotting dependency."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 360
MARGIN = dict(left=60, right=150, top=36, bottom=48)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


def _frame(title: str, ylabel: str, lo: float, hi: float, parts: list[str]):
    x0, y0 = MARGIN["left"], HEIGHT - MARGIN["bottom"]
    x1, y1 = WIDTH - MARGIN["right"], MARGIN["top"]
    parts.append(f'<text x="{WIDTH / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>')
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>')
    parts.append(f'<text x="14" y="{(y0 + y1) / 2:.1f}" font-size="12" '
                 f'transform="rotate(-90 14 {(y0 + y1) / 2:.1f})" text-anchor="middle">{escape(ylabel)}</text>')
    for v in np.linspace(lo, hi, 5):
        y = y0 - (v - lo) / (hi - lo) * (y0 - y1)
        parts.append(f'<text x="{x0 - 6}" y="{y + 4:.1f}" font-size="10" text-anchor="end">{v:.3f}</text>')
        parts.append(f'<line x1="{x0}" y1="{y:.1f}" x2="{x1}" y2="{y:.1f}" stroke="#ddd"/>')
    return x0, y0, x1, y1


def _range(values):
    lo, hi = float(min(values)), float(max(values))
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _wrap(parts):
    return ('<svg xmlns="http://www.w3.org/2000/svg" '
            f'width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">\n'
            + "\n".join(parts) + "\n</svg>\n")


def line_chart(series: dict[str, list[float]], title: str = "", ylabel: str = "", xlabel: str = "epoch") -> str:
    """One polyline per named series, x = index."""
    values = [v for ys in series.values() for v in ys]
    if not values:
        return _wrap([])
    lo, hi = _range(values)
    n = max(len(ys) for ys in series.values())
    parts: list[str] = []
    x0, y0, x1, y1 = _frame(title, ylabel, lo, hi, parts)
    parts.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{HEIGHT - 12}" font-size="12" text-anchor="middle">{escape(xlabel)}</text>')

    def sx(i):
        return x0 + (i / max(n - 1, 1)) * (x1 - x0)

    def sy(v):
        return y0 - (v - lo) / (hi - lo) * (y0 - y1)

    for k, (name, ys) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{sx(i):.1f},{sy(v):.1f}" for i, v in enumerate(ys))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        ly = y1 + 16 * k
        parts.append(f'<line x1="{x1 + 10}" y1="{ly}" x2="{x1 + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{x1 + 36}" y="{ly + 4}" font-size="11">{escape(name)}</text>')
    return _wrap(parts)


def box_plot(groups: dict[str, list[float]], title: str = "", ylabel: str = "kappa") -> str:
    """Min/quartiles/median/max boxes, one per named group."""
    values = [v for vs in groups.values() for v in vs]
    if not values:
        return _wrap([])
    lo, hi = _range(values)
    parts: list[str] = []
    x0, y0, x1, y1 = _frame(title, ylabel, lo, hi, parts)
    step = (x1 - x0) / max(len(groups), 1)

    def sy(v):
        return y0 - (v - lo) / (hi - lo) * (y0 - y1)

    for k, (name, vs) in enumerate(groups.items()):
        cx = x0 + step * (k + 0.5)
        half = min(step * 0.3, 30)
        q0, q1, q2, q3, q4 = np.percentile(vs, [0, 25, 50, 75, 100])
        parts.append(f'<line x1="{cx:.1f}" y1="{sy(q0):.1f}" x2="{cx:.1f}" y2="{sy(q4):.1f}" stroke="black"/>')
        parts.append(f'<rect x="{cx - half:.1f}" y="{sy(q3):.1f}" width="{2 * half:.1f}" '
                     f'height="{max(sy(q1) - sy(q3), 0.5):.1f}" fill="{PALETTE[k % len(PALETTE)]}" '
                     'fill-opacity="0.5" stroke="black"/>')
        parts.append(f'<line x1="{cx - half:.1f}" y1="{sy(q2):.1f}" x2="{cx + half:.1f}" y2="{sy(q2):.1f}" '
                     'stroke="black" stroke-width="2"/>')
        parts.append(f'<text x="{cx:.1f}" y="{y0 + 16}" font-size="10" text-anchor="middle">{escape(name)}</text>')
    return _wrap(parts)
