"""Minimal self-contained SVG line plot (no renderer dependency)."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape


def line_plot_svg(xs, ys, level=None, title="", xlabel="step", ylabel="", width=640, height=360) -> str:
    """Polyline of ``ys`` against ``xs`` with an optional dashed horizontal level."""
    ml, mr, mt, mb = 60, 20, 30, 45
    pw, ph = width - ml - mr, height - mt - mb
    finite = [y for y in ys if math.isfinite(y)]
    lo = min(finite + ([level] if level is not None else []) + [0.0])
    hi = max(finite + ([level] if level is not None else []) + [1e-12])
    if hi - lo < 1e-12:
        hi = lo + 1.0
    x0, x1 = (min(xs), max(xs)) if len(xs) else (0, 1)
    if x1 == x0:
        x1 = x0 + 1

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return mt + (hi - y) / (hi - lo) * ph

    pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys) if math.isfinite(y))
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
    ]
    for i in range(5):
        yv = lo + (hi - lo) * i / 4
        out.append(f'<text x="{ml - 6}" y="{sy(yv) + 4:.1f}" text-anchor="end" font-family="sans-serif" font-size="10">{yv:.3g}</text>')
        xv = x0 + (x1 - x0) * i / 4
        out.append(f'<text x="{sx(xv):.1f}" y="{mt + ph + 15}" text-anchor="middle" font-family="sans-serif" font-size="10">{xv:.0f}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {mt + ph / 2:.1f})">{escape(ylabel)}</text>')
    if level is not None:
        out.append(f'<line x1="{ml}" y1="{sy(level):.2f}" x2="{ml + pw}" y2="{sy(level):.2f}" stroke="gray" stroke-dasharray="6,4"/>')
    out.append(f'<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{pts}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, svg: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(svg, encoding="utf-8")
    return path
