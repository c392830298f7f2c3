"""Minimal deterministic SVG scatter plots: points, fit line, 95% CI band.

Hand-rolled on purpose: the output must be byte-identical across runs and
machines, so no plotting toolkit (whose output embeds ids, dates or
library-version quirks) is involved. The confidence band around the fitted
line of a simple regression is the pointwise +-z * se(yhat(x)) with
se(yhat(x))^2 = [1, x] V [1, x]' for the 2x2 coefficient covariance V.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

WIDTH, HEIGHT = 640, 480
MARGIN_LEFT, MARGIN_RIGHT = 64, 16
MARGIN_TOP, MARGIN_BOTTOM = 36, 56
Z_95 = 1.96


def band_half_width(x: float, vcov: Sequence[Sequence[float]],
                    z: float = Z_95) -> float:
    """z * sqrt([1, x] V [1, x]') for a 2-coefficient model."""
    v = vcov
    quad = v[0][0] + 2.0 * x * v[0][1] + x * x * v[1][1]
    return z * math.sqrt(max(quad, 0.0))


def nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    """Ticks on a 1/2/5 ladder covering [lo, hi]."""
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    raw = span / max(target, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = math.ceil(lo / step) * step
    ticks = []
    value = first
    while value <= hi + step * 1e-9:
        ticks.append(round(value, 10))
        value += step
    return ticks


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def _fmt_tick(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return f"{x:g}"


@dataclass(frozen=True)
class ScatterData:
    x: tuple[float, ...]
    y: tuple[float, ...]
    intercept: float
    slope: float
    vcov: tuple[tuple[float, float], tuple[float, float]]
    x_label: str
    y_label: str
    title: str


def scatter_svg(data: ScatterData, z: float = Z_95, band_points: int = 64) -> str:
    """A self-contained SVG document for one simple-regression scatter."""
    if not data.x:
        raise ValueError("no points to plot")
    x_lo, x_hi = min(data.x), max(data.x)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    y_candidates = list(data.y)
    for t in range(band_points + 1):
        gx = x_lo + (x_hi - x_lo) * t / band_points
        gy = data.intercept + data.slope * gx
        half = band_half_width(gx, data.vcov, z)
        y_candidates += [gy - half, gy + half]
    y_lo, y_hi = min(y_candidates), max(y_candidates)
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    x_pad = 0.04 * (x_hi - x_lo)
    y_pad = 0.06 * (y_hi - y_lo)
    x_lo, x_hi = x_lo - x_pad, x_hi + x_pad
    y_lo, y_hi = y_lo - y_pad, y_hi + y_pad

    plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

    def sx(x: float) -> float:
        return MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y: float) -> float:
        return MARGIN_TOP + (y_hi - y) / (y_hi - y_lo) * plot_h

    out = []
    out.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
               f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">')
    out.append(f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>')
    out.append(f'<text x="{WIDTH / 2:.1f}" y="20" font-family="sans-serif" '
               f'font-size="14" text-anchor="middle">{data.title}</text>')

    # confidence band
    upper, lower = [], []
    for t in range(band_points + 1):
        gx = x_lo + (x_hi - x_lo) * t / band_points
        gy = data.intercept + data.slope * gx
        half = band_half_width(gx, data.vcov, z)
        upper.append((sx(gx), sy(gy + half)))
        lower.append((sx(gx), sy(gy - half)))
    path = " ".join(f"{_fmt(px)},{_fmt(py)}" for px, py in upper + lower[::-1])
    out.append(f'<polygon points="{path}" fill="#bfbfbf" fill-opacity="0.5" '
               f'stroke="none"/>')

    # axes
    x0, y0 = MARGIN_LEFT, MARGIN_TOP + plot_h
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0 + plot_w}" y2="{y0}" '
               f'stroke="black" stroke-width="1"/>')
    out.append(f'<line x1="{x0}" y1="{MARGIN_TOP}" x2="{x0}" y2="{y0}" '
               f'stroke="black" stroke-width="1"/>')
    for tick in nice_ticks(x_lo, x_hi):
        px = sx(tick)
        out.append(f'<line x1="{_fmt(px)}" y1="{y0}" x2="{_fmt(px)}" '
                   f'y2="{y0 + 4}" stroke="black" stroke-width="1"/>')
        out.append(f'<text x="{_fmt(px)}" y="{y0 + 18}" font-family="sans-serif" '
                   f'font-size="11" text-anchor="middle">{_fmt_tick(tick)}</text>')
    for tick in nice_ticks(y_lo, y_hi):
        py = sy(tick)
        out.append(f'<line x1="{x0 - 4}" y1="{_fmt(py)}" x2="{x0}" '
                   f'y2="{_fmt(py)}" stroke="black" stroke-width="1"/>')
        out.append(f'<text x="{x0 - 8}" y="{_fmt(py + 4)}" font-family="sans-serif" '
                   f'font-size="11" text-anchor="end">{_fmt_tick(tick)}</text>')

    # points
    for px, py in zip(data.x, data.y):
        out.append(f'<circle cx="{_fmt(sx(px))}" cy="{_fmt(sy(py))}" r="2.5" '
                   f'fill="#33547a" fill-opacity="0.55" stroke="none"/>')

    # fitted line
    lx0, lx1 = x_lo, x_hi
    out.append(f'<line x1="{_fmt(sx(lx0))}" y1="{_fmt(sy(data.intercept + data.slope * lx0))}" '
               f'x2="{_fmt(sx(lx1))}" y2="{_fmt(sy(data.intercept + data.slope * lx1))}" '
               f'stroke="#cc0000" stroke-width="1.8"/>')

    out.append(f'<text x="{MARGIN_LEFT + plot_w / 2:.1f}" y="{HEIGHT - 14}" '
               f'font-family="sans-serif" font-size="12" '
               f'text-anchor="middle">{data.x_label}</text>')
    out.append(f'<text x="16" y="{MARGIN_TOP + plot_h / 2:.1f}" '
               f'font-family="sans-serif" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 16 {MARGIN_TOP + plot_h / 2:.1f})">'
               f'{data.y_label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
