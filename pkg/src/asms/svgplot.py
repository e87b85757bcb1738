"""Tiny deterministic SVG emitter for comparison bars and learning curves.

Pure text generation: fixed canvas, fixed palette, fixed float formatting,
no timestamps, so outputs diff cleanly between runs.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence

WIDTH = 640
HEIGHT = 400
MARGIN_L = 70
MARGIN_R = 20
MARGIN_T = 40
MARGIN_B = 60

PALETTE = ("#4c78a8", "#f58518", "#54a24b", "#e45756", "#72b7b2",
           "#b279a2", "#9d755d", "#bab0ac")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _axis_bounds(values: Sequence[float]) -> tuple[float, float]:
    finite = [v for v in values if v is not None and math.isfinite(v)]
    if not finite:
        return 0.0, 1.0
    lo, hi = min(finite), max(finite)
    lo = min(lo, 0.0)
    hi = max(hi, 0.0)
    if hi == lo:
        hi = lo + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad if lo < 0 else lo, hi + pad


def _header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="22" text-anchor="middle" font-size="15">{title}</text>',
    ]


def _y_axis(lo: float, hi: float, label: str) -> tuple[list[str], float, float]:
    plot_h = HEIGHT - MARGIN_T - MARGIN_B
    scale = plot_h / (hi - lo)

    def y_of(v: float) -> float:
        return HEIGHT - MARGIN_B - (v - lo) * scale

    parts = [f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" '
             f'y2="{HEIGHT - MARGIN_B}" stroke="black"/>']
    for k in range(5):
        v = lo + k * (hi - lo) / 4
        y = y_of(v)
        parts.append(f'<line x1="{MARGIN_L - 4}" y1="{_fmt(y)}" x2="{MARGIN_L}" '
                     f'y2="{_fmt(y)}" stroke="black"/>')
        parts.append(f'<text x="{MARGIN_L - 8}" y="{_fmt(y + 4)}" text-anchor="end" '
                     f'font-size="11">{_fmt(v)}</text>')
    parts.append(f'<text x="16" y="{HEIGHT / 2:.0f}" font-size="12" text-anchor="middle" '
                 f'transform="rotate(-90 16 {HEIGHT / 2:.0f})">{label}</text>')
    return parts, lo, scale


def grouped_bars(categories: Sequence[str], series: Mapping[str, Sequence[float | None]],
                 title: str, ylabel: str = "QoE") -> str:
    """Grouped bar chart; None cells are simply not drawn."""
    all_vals = [v for vals in series.values() for v in vals if v is not None]
    lo, hi = _axis_bounds(all_vals)
    parts = _header(title)
    axis, lo, scale = _y_axis(lo, hi, ylabel)
    parts += axis

    plot_w = WIDTH - MARGIN_L - MARGIN_R
    n_cat = max(1, len(categories))
    n_ser = max(1, len(series))
    group_w = plot_w / n_cat
    bar_w = group_w * 0.8 / n_ser
    y_zero = HEIGHT - MARGIN_B - (0.0 - lo) * scale

    parts.append(f'<line x1="{MARGIN_L}" y1="{_fmt(y_zero)}" '
                 f'x2="{WIDTH - MARGIN_R}" y2="{_fmt(y_zero)}" stroke="black"/>')
    for ci, cat in enumerate(categories):
        cx = MARGIN_L + group_w * (ci + 0.5)
        parts.append(f'<text x="{_fmt(cx)}" y="{HEIGHT - MARGIN_B + 16}" '
                     f'text-anchor="middle" font-size="11">{cat}</text>')
        for si, (name, vals) in enumerate(series.items()):
            v = vals[ci] if ci < len(vals) else None
            if v is None or not math.isfinite(v):
                continue
            x = cx - group_w * 0.4 + si * bar_w
            y_v = HEIGHT - MARGIN_B - (v - lo) * scale
            top, height = (y_v, y_zero - y_v) if v >= 0 else (y_zero, y_v - y_zero)
            parts.append(f'<rect x="{_fmt(x)}" y="{_fmt(top)}" width="{_fmt(bar_w * 0.92)}" '
                         f'height="{_fmt(height)}" fill="{PALETTE[si % len(PALETTE)]}"/>')
    for si, name in enumerate(series):
        x = MARGIN_L + 10 + si * 120
        parts.append(f'<rect x="{x}" y="{HEIGHT - 24}" width="12" height="12" '
                     f'fill="{PALETTE[si % len(PALETTE)]}"/>')
        parts.append(f'<text x="{x + 16}" y="{HEIGHT - 14}" font-size="11">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def line_chart(series: Mapping[str, Sequence[float]], title: str,
               xlabel: str = "episode", ylabel: str = "reward") -> str:
    """Polyline chart over a shared integer x axis starting at 0."""
    all_vals = [v for vals in series.values() for v in vals if math.isfinite(v)]
    lo, hi = _axis_bounds(all_vals)
    parts = _header(title)
    axis, lo, scale = _y_axis(lo, hi, ylabel)
    parts += axis

    plot_w = WIDTH - MARGIN_L - MARGIN_R
    n = max(2, max((len(v) for v in series.values()), default=2))
    parts.append(f'<line x1="{MARGIN_L}" y1="{HEIGHT - MARGIN_B}" '
                 f'x2="{WIDTH - MARGIN_R}" y2="{HEIGHT - MARGIN_B}" stroke="black"/>')
    parts.append(f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - MARGIN_B + 30}" '
                 f'text-anchor="middle" font-size="12">{xlabel}</text>')
    for si, (name, vals) in enumerate(series.items()):
        pts = []
        for i, v in enumerate(vals):
            x = MARGIN_L + plot_w * i / (n - 1)
            y = HEIGHT - MARGIN_B - (v - lo) * scale
            pts.append(f"{_fmt(x)},{_fmt(y)}")
        parts.append(f'<polyline points="{" ".join(pts)}" fill="none" '
                     f'stroke="{PALETTE[si % len(PALETTE)]}" stroke-width="1.5"/>')
        x = MARGIN_L + 10 + si * 150
        parts.append(f'<rect x="{x}" y="{HEIGHT - 24}" width="12" height="12" '
                     f'fill="{PALETTE[si % len(PALETTE)]}"/>')
        parts.append(f'<text x="{x + 16}" y="{HEIGHT - 14}" font-size="11">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


__all__ = ["grouped_bars", "line_chart"]
