"""Dependency-free SVG line/bar charts for experiment outputs.

Plots are conveniences; every plotted series also lands in a CSV. Only basic
primitives are emitted (rect, line, polyline, text) so files stay small and
well-formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str = ""
    kind: str = "line"  # line | bar


@dataclass
class Panel:
    title: str
    series: list[Series] = field(default_factory=list)
    x_label: str = ""
    y_label: str = ""


def _finite_range(values) -> tuple[float, float]:
    v = np.concatenate([np.asarray(a, dtype=float).ravel() for a in values])
    v = v[np.isfinite(v)]
    if v.size == 0:
        return 0.0, 1.0
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _render_panel(panel: Panel, ox: float, oy: float, w: float, h: float) -> list[str]:
    margin = 42.0
    px, py = ox + margin, oy + 24.0
    pw, ph = w - margin - 12.0, h - margin - 24.0
    xlo, xhi = _finite_range([s.x for s in panel.series])
    ylo, yhi = _finite_range([s.y for s in panel.series])

    def sx(v):
        return px + (v - xlo) / (xhi - xlo) * pw

    def sy(v):
        return py + ph - (v - ylo) / (yhi - ylo) * ph

    parts = [
        f'<rect x="{px:.1f}" y="{py:.1f}" width="{pw:.1f}" height="{ph:.1f}" fill="none" stroke="#333"/>',
        f'<text x="{ox + w / 2:.1f}" y="{oy + 14:.1f}" text-anchor="middle" font-size="12">{escape(panel.title)}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv = xlo + frac * (xhi - xlo)
        yv = ylo + frac * (yhi - ylo)
        parts.append(
            f'<text x="{sx(xv):.1f}" y="{py + ph + 14:.1f}" text-anchor="middle" font-size="9">{xv:.3g}</text>'
        )
        parts.append(
            f'<text x="{px - 4:.1f}" y="{sy(yv) + 3:.1f}" text-anchor="end" font-size="9">{yv:.3g}</text>'
        )
    if panel.x_label:
        parts.append(
            f'<text x="{px + pw / 2:.1f}" y="{py + ph + 30:.1f}" text-anchor="middle" font-size="10">{escape(panel.x_label)}</text>'
        )
    for idx, s in enumerate(panel.series):
        color = PALETTE[idx % len(PALETTE)]
        finite = np.isfinite(np.asarray(s.y, dtype=float))
        xs = np.asarray(s.x, dtype=float)[finite]
        ys = np.asarray(s.y, dtype=float)[finite]
        if s.kind == "bar":
            width = pw / max(len(xs), 1) * 0.7
            for xv, yv in zip(xs, ys):
                x0 = sx(xv) - width / 2.0
                y0 = sy(yv)
                parts.append(
                    f'<rect x="{x0:.1f}" y="{y0:.1f}" width="{width:.1f}" height="{sy(ylo) - y0:.1f}" '
                    f'fill="{color}" fill-opacity="0.6"/>'
                )
        else:
            pts = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(xs, ys))
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.2"/>')
        if s.label:
            ly = py + 12 + 12 * idx
            parts.append(f'<line x1="{px + 6:.1f}" y1="{ly:.1f}" x2="{px + 22:.1f}" y2="{ly:.1f}" stroke="{color}"/>')
            parts.append(f'<text x="{px + 26:.1f}" y="{ly + 3:.1f}" font-size="9">{escape(s.label)}</text>')
    return parts


def render_grid(panels: list[Panel], cols: int = 2, panel_width: float = 360.0, panel_height: float = 240.0) -> str:
    rows = (len(panels) + cols - 1) // cols
    width = cols * panel_width
    height = rows * panel_height
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}">',
        f'<rect x="0" y="0" width="{width:.0f}" height="{height:.0f}" fill="white"/>',
    ]
    for i, panel in enumerate(panels):
        ox = (i % cols) * panel_width
        oy = (i // cols) * panel_height
        parts.extend(_render_panel(panel, ox, oy, panel_width, panel_height))
    parts.append("</svg>")
    return "\n".join(parts)
