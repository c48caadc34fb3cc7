"""Minimal static SVG plots: polylines on linear or log axes, guide lines, bars.

Only what the analyzer needs.  Output is deterministic text so re-running an
analysis reproduces the files byte for byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


@dataclass
class Series:
    x: Sequence[float]
    y: Sequence[float]
    label: str = ""
    dashed: bool = False
    markers: bool = False


@dataclass
class Figure:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    logx: bool = False
    logy: bool = False
    series: List[Series] = field(default_factory=list)
    hlines: List[float] = field(default_factory=list)

    def add(self, x, y, label="", dashed=False, markers=False):
        self.series.append(Series(np.asarray(x, float), np.asarray(y, float), label, dashed, markers))
        return self

    def save(self, path):
        Path(path).write_text(self.render())

    def render(self):
        tx = np.log10 if self.logx else (lambda a: np.asarray(a, float))
        ty = np.log10 if self.logy else (lambda a: np.asarray(a, float))
        xs, ys = [], []
        for s in self.series:
            m = _valid(s.x, s.y, self.logx, self.logy)
            xs.append(tx(s.x[m]))
            ys.append(ty(s.y[m]))
        for h in self.hlines:
            if not self.logy or h > 0:
                ys.append(ty(np.array([h])))
        xlo, xhi = _range(xs)
        ylo, yhi = _range(ys)

        def px(v):
            return LEFT + (v - xlo) / (xhi - xlo) * (WIDTH - LEFT - RIGHT)

        def py(v):
            return HEIGHT - BOTTOM - (v - ylo) / (yhi - ylo) * (HEIGHT - TOP - BOTTOM)

        out = [_header(self.title)]
        out += _axes(xlo, xhi, ylo, yhi, px, py, self.logx, self.logy, self.xlabel, self.ylabel)
        for h in self.hlines:
            if self.logy and h <= 0:
                continue
            y = py(float(ty(np.array([h]))[0]))
            out.append(f'<line x1="{LEFT}" y1="{y:.2f}" x2="{WIDTH - RIGHT}" y2="{y:.2f}" '
                       'stroke="#555" stroke-dasharray="6,4"/>')
        for i, (s, x, y) in enumerate(zip(self.series, xs, ys)):
            color = COLORS[i % len(COLORS)]
            pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
            dash = ' stroke-dasharray="4,3"' if s.dashed else ""
            if len(x) > 1:
                out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{pts}"/>')
            if s.markers or len(x) == 1:
                out += [f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="3" fill="{color}"/>' for a, b in zip(x, y)]
            if s.label:
                out.append(f'<text x="{WIDTH - RIGHT - 5}" y="{TOP + 15 + 15 * i}" text-anchor="end" '
                           f'font-size="12" fill="{color}">{escape(s.label)}</text>')
        out.append("</svg>\n")
        return "\n".join(out)


def bar_chart(path, labels, values, title="", ylabel=""):
    """Vertical bars, one per label; negative values are drawn from zero downwards."""
    values = np.asarray(values, float)
    lo, hi = min(0.0, float(np.min(values, initial=0.0))), max(0.0, float(np.max(values, initial=0.0)))
    if hi == lo:
        hi = lo + 1.0
    n = max(len(values), 1)
    w = (WIDTH - LEFT - RIGHT) / n

    def py(v):
        return HEIGHT - BOTTOM - (v - lo) / (hi - lo) * (HEIGHT - TOP - BOTTOM)

    out = [_header(title)]
    out.append(f'<line x1="{LEFT}" y1="{py(0):.2f}" x2="{WIDTH - RIGHT}" y2="{py(0):.2f}" stroke="black"/>')
    out.append(f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{HEIGHT - BOTTOM}" stroke="black"/>')
    for v in _ticks(lo, hi):
        out.append(f'<text x="{LEFT - 6}" y="{py(v) + 4:.2f}" text-anchor="end" font-size="11">{_num(v)}</text>')
    for i, (lab, v) in enumerate(zip(labels, values)):
        x0 = LEFT + i * w + 0.1 * w
        y0, y1 = sorted((py(0.0), py(v)))
        out.append(f'<rect x="{x0:.2f}" y="{y0:.2f}" width="{0.8 * w:.2f}" height="{y1 - y0:.2f}" fill="{COLORS[0]}"/>')
        out.append(f'<text x="{x0 + 0.4 * w:.2f}" y="{HEIGHT - BOTTOM + 16}" text-anchor="middle" '
                   f'font-size="11">{escape(str(lab))}</text>')
    if ylabel:
        out.append(f'<text x="15" y="{(TOP + HEIGHT - BOTTOM) / 2:.2f}" font-size="12" '
                   f'transform="rotate(-90 15 {(TOP + HEIGHT - BOTTOM) / 2:.2f})" text-anchor="middle">{escape(ylabel)}</text>')
    out.append("</svg>\n")
    Path(path).write_text("\n".join(out))


def _valid(x, y, logx, logy):
    m = np.isfinite(x) & np.isfinite(y)
    if logx:
        m &= x > 0
    if logy:
        m &= y > 0
    return m


def _range(arrays):
    vals = np.concatenate([a for a in arrays if len(a)]) if any(len(a) for a in arrays) else np.array([0.0, 1.0])
    lo, hi = float(vals.min()), float(vals.max())
    if hi - lo < 1e-12 * max(1.0, abs(lo)):
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _ticks(lo, hi, n=5):
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (m * step) <= n:
            step *= m
            break
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step) + 1)]


def _num(v):
    return f"{v:.3g}" if v != 0 else "0"


def _header(title):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">\n'
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>\n'
            f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')


def _axes(xlo, xhi, ylo, yhi, px, py, logx, logy, xlabel, ylabel):
    out = [f'<rect x="{LEFT}" y="{TOP}" width="{WIDTH - LEFT - RIGHT}" height="{HEIGHT - TOP - BOTTOM}" '
           'fill="none" stroke="black"/>']
    for v in _ticks(xlo, xhi):
        lab = _num(10**v) if logx else _num(v)
        out.append(f'<line x1="{px(v):.2f}" y1="{HEIGHT - BOTTOM}" x2="{px(v):.2f}" y2="{HEIGHT - BOTTOM + 4}" stroke="black"/>')
        out.append(f'<text x="{px(v):.2f}" y="{HEIGHT - BOTTOM + 17}" text-anchor="middle" font-size="11">{lab}</text>')
    for v in _ticks(ylo, yhi):
        lab = _num(10**v) if logy else _num(v)
        out.append(f'<line x1="{LEFT - 4}" y1="{py(v):.2f}" x2="{LEFT}" y2="{py(v):.2f}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 6}" y="{py(v) + 4:.2f}" text-anchor="end" font-size="11">{lab}</text>')
    if xlabel:
        out.append(f'<text x="{(LEFT + WIDTH - RIGHT) / 2:.2f}" y="{HEIGHT - 12}" text-anchor="middle" '
                   f'font-size="12">{escape(xlabel)}</text>')
    if ylabel:
        yc = (TOP + HEIGHT - BOTTOM) / 2
        out.append(f'<text x="15" y="{yc:.2f}" font-size="12" transform="rotate(-90 15 {yc:.2f})" '
                   f'text-anchor="middle">{escape(ylabel)}</text>')
    return out


def power_law_panel(path, x, y, fit=None, title="", xlabel="", ylabel=""):
    """Log-log scatter of |y| against x with an optional fitted line."""
    fig = Figure(title=title, xlabel=xlabel, ylabel=ylabel, logx=True, logy=True)
    x = np.asarray(x, float)
    fig.add(x, np.abs(np.asarray(y, float)), label="data", markers=True)
    if fit is not None:
        xx = np.geomspace(max(x[x > 0].min(), 1e-300), x.max(), 50) if np.any(x > 0) else x
        fig.add(xx, fit(xx), label=f"slope {fit.exponent:.3f}", dashed=True)
    fig.save(path)
    return fig


def guide_plot(path, t, ratio, guide: Optional[float], title="", xlabel="t", ylabel=""):
    fig = Figure(title=title, xlabel=xlabel, ylabel=ylabel)
    fig.add(t, ratio, label=ylabel)
    if guide is not None:
        fig.hlines.append(guide)
    fig.save(path)
    return fig
