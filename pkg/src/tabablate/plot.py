"""Deterministic SVG ablation plots: mean curves, +/-1 std bands, dashed guardrails."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .errors import EmptySpec

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


@dataclass
class Curve:
    label: str
    mean: np.ndarray
    std: np.ndarray | None = None
    fractions: np.ndarray | None = None

    def grid(self) -> np.ndarray:
        if self.fractions is not None:
            return np.asarray(self.fractions, dtype=float)
        return np.linspace(0, 1, len(self.mean))


@dataclass
class PlotSpec:
    curves: list[Curve]
    horizontal: float | None = None
    vertical: float | None = None  # fraction of features ablated
    title: str = ""
    xlabel: str = "fraction of features ablated"
    ylabel: str = "model capability"
    path: str | Path | None = None
    width: int = 480
    height: int = 360
    extra: dict = field(default_factory=dict)


_M = {"left": 56, "right": 16, "top": 28, "bottom": 44}


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_plot(spec: PlotSpec) -> str:
    """Render ``spec`` to SVG text; also writes it when ``spec.path`` is set."""
    if not spec.curves:
        raise EmptySpec("plot needs at least one curve")
    W, H = spec.width, spec.height
    x0, x1 = _M["left"], W - _M["right"]
    y0, y1 = H - _M["bottom"], _M["top"]

    def sx(x):
        return x0 + (x1 - x0) * float(x)

    def sy(y):
        return y0 - (y0 - y1) * float(np.clip(y, 0.0, 1.0))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<line class="axis" x1="{_fmt(x0)}" y1="{_fmt(y0)}" x2="{_fmt(x1)}" y2="{_fmt(y0)}" stroke="black"/>',
        f'<line class="axis" x1="{_fmt(x0)}" y1="{_fmt(y0)}" x2="{_fmt(x0)}" y2="{_fmt(y1)}" stroke="black"/>',
    ]
    for t in np.linspace(0, 1, 6):
        out.append(f'<text x="{_fmt(sx(t))}" y="{_fmt(y0 + 16)}" font-size="10" text-anchor="middle">{t:.1f}</text>')
        out.append(f'<text x="{_fmt(x0 - 6)}" y="{_fmt(sy(t) + 3)}" font-size="10" text-anchor="end">{t:.1f}</text>')
    out.append(f'<text x="{_fmt((x0 + x1) / 2)}" y="{_fmt(H - 8)}" font-size="12" text-anchor="middle">{escape(spec.xlabel)}</text>')
    out.append(f'<text x="14" y="{_fmt((y0 + y1) / 2)}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 14 {_fmt((y0 + y1) / 2)})">{escape(spec.ylabel)}</text>')
    if spec.title:
        out.append(f'<text x="{_fmt((x0 + x1) / 2)}" y="16" font-size="13" text-anchor="middle">{escape(spec.title)}</text>')

    for k, c in enumerate(spec.curves):
        color = PALETTE[k % len(PALETTE)]
        xs = c.grid()
        mean = np.asarray(c.mean, dtype=float)
        if c.std is not None:
            std = np.asarray(c.std, dtype=float)
            upper = [f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(xs, mean + std)]
            lower = [f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(xs[::-1], (mean - std)[::-1])]
            out.append(f'<polygon class="band" points="{" ".join(upper + lower)}" fill="{color}" '
                       f'fill-opacity="0.2" stroke="none"/>')
        pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(xs, mean))
        out.append(f'<polyline class="curve" points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = y1 + 14 * k + 8
        out.append(f'<rect class="legend" x="{_fmt(x1 - 120)}" y="{_fmt(ly - 6)}" width="12" height="4" fill="{color}"/>')
        out.append(f'<text x="{_fmt(x1 - 104)}" y="{_fmt(ly)}" font-size="10">{escape(c.label)}</text>')

    if spec.horizontal is not None:
        y = sy(spec.horizontal)
        out.append(f'<line class="guardrail horizontal" x1="{_fmt(x0)}" y1="{_fmt(y)}" x2="{_fmt(x1)}" '
                   f'y2="{_fmt(y)}" stroke="black" stroke-dasharray="6,4"/>')
    if spec.vertical is not None:
        x = sx(spec.vertical)
        out.append(f'<line class="guardrail vertical" x1="{_fmt(x)}" y1="{_fmt(y0)}" x2="{_fmt(x)}" '
                   f'y2="{_fmt(y1)}" stroke="black" stroke-dasharray="6,4"/>')
    out.append("</svg>")
    svg = "\n".join(out) + "\n"
    if spec.path is not None:
        Path(spec.path).write_text(svg, encoding="utf-8")
    return svg
