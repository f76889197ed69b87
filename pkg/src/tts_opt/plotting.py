"""Minimal log-log SVG line charts, written by hand."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _thin(ks, vs, max_points=400):
    """Keep roughly log-spaced points so long runs stay small on disk."""
    if ks.size <= max_points:
        return ks, vs
    grid = np.unique(np.geomspace(1, ks.size, max_points).astype(int) - 1)
    return ks[grid], vs[grid]


def _series(records):
    ks = np.array([r.k for r in records if r.metric is not None and r.metric > 0 and r.stable],
                  dtype=float)
    vs = np.array([r.metric for r in records if r.metric is not None and r.metric > 0 and r.stable],
                  dtype=float)
    return ks + 1.0, vs


class _Panel:
    def __init__(self, x0, y0, w, h, xs, ys, ylog=True):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.ylog = ylog
        self.lx = (math.log10(min(xs)), math.log10(max(xs)))
        if self.lx[0] == self.lx[1]:
            self.lx = (self.lx[0] - 0.5, self.lx[1] + 0.5)
        ly = [math.log10(v) for v in ys] if ylog else list(ys)
        lo, hi = min(ly), max(ly)
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        pad = 0.05 * (hi - lo)
        self.ly = (lo - pad, hi + pad)

    def px(self, x):
        t = (math.log10(x) - self.lx[0]) / (self.lx[1] - self.lx[0])
        return self.x0 + t * self.w

    def py(self, y):
        v = math.log10(y) if self.ylog else y
        t = (v - self.ly[0]) / (self.ly[1] - self.ly[0])
        return self.y0 + self.h - t * self.h

    def polyline(self, xs, ys, color, width=1.0, dash=None, opacity=1.0):
        pts = " ".join(f"{self.px(x):.2f},{self.py(y):.2f}" for x, y in zip(xs, ys))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        return (f'<polyline fill="none" stroke="{color}" stroke-width="{width}" '
                f'stroke-opacity="{opacity}"{extra} points="{pts}"/>')

    def axes(self, xlabel, ylabel, title):
        out = [f'<rect x="{self.x0}" y="{self.y0}" width="{self.w}" height="{self.h}" '
               f'fill="none" stroke="#333"/>']
        for e in range(math.ceil(self.lx[0]), math.floor(self.lx[1]) + 1):
            x = self.px(10.0 ** e)
            out.append(f'<line x1="{x:.2f}" y1="{self.y0 + self.h}" x2="{x:.2f}" '
                       f'y2="{self.y0 + self.h + 5}" stroke="#333"/>')
            out.append(f'<text x="{x:.2f}" y="{self.y0 + self.h + 18}" font-size="11" '
                       f'text-anchor="middle">1e{e}</text>')
        if self.ylog:
            ticks = [(10.0 ** e, f"1e{e}") for e in range(math.ceil(self.ly[0]), math.floor(self.ly[1]) + 1)]
        else:
            ticks = [(v, f"{v:.3g}") for v in np.linspace(self.ly[0], self.ly[1], 5)]
        for v, label in ticks:
            y = self.py(v)
            out.append(f'<line x1="{self.x0 - 5}" y1="{y:.2f}" x2="{self.x0}" y2="{y:.2f}" stroke="#333"/>')
            out.append(f'<text x="{self.x0 - 8}" y="{y + 4:.2f}" font-size="11" '
                       f'text-anchor="end">{label}</text>')
        cx = self.x0 + self.w / 2
        out.append(f'<text x="{cx}" y="{self.y0 + self.h + 36}" font-size="12" '
                   f'text-anchor="middle">{escape(xlabel)}</text>')
        out.append(f'<text x="{cx}" y="{self.y0 - 10}" font-size="13" '
                   f'text-anchor="middle">{escape(title)}</text>')
        cy = self.y0 + self.h / 2
        out.append(f'<text x="{self.x0 - 55}" y="{cy}" font-size="12" text-anchor="middle" '
                   f'transform="rotate(-90 {self.x0 - 55} {cy})">{escape(ylabel)}</text>')
        return out


def render_svg(runs: dict, median=None, envelope=None, title="metric") -> str:
    """SVG text for ``{label: records}``; ``envelope=(exponent, log_power)`` adds a ratio panel."""
    series = {name: _series(recs) for name, recs in runs.items()}
    series = {n: s for n, s in series.items() if s[0].size}
    if not series:
        raise ValueError("no positive metric values to plot")
    med = _series(median) if median is not None else None
    allx = np.concatenate([s[0] for s in series.values()])
    ally = np.concatenate([s[1] for s in series.values()])

    env_curve = None
    if envelope is not None:
        exponent, logp = envelope
        ref_x, ref_y = med if med is not None and med[0].size else next(iter(series.values()))
        mask = ref_x > 1.0
        if not mask.any():
            raise ValueError("envelope needs iterations beyond k = 0")
        ex = ref_x[mask]
        shape = ex ** exponent * np.log(ex) ** logp
        scale = ref_y[mask][0] / shape[0]
        env_curve = (ex, scale * shape, ref_y[mask] / shape)
        ally = np.concatenate([ally, env_curve[1]])

    width = 1000 if envelope is not None else 560
    height = 420
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             '<rect width="100%" height="100%" fill="white"/>']
    left = _Panel(80, 40, 420, 300, allx, ally)
    parts += left.axes("k", "metric", title)
    for i, (name, (xs, ys)) in enumerate(sorted(series.items())):
        xs, ys = _thin(xs, ys)
        parts.append(left.polyline(xs, ys, PALETTE[i % len(PALETTE)], 1.0, opacity=0.5))
    if med is not None and med[0].size:
        xs, ys = _thin(*med)
        parts.append(left.polyline(xs, ys, "#000", 2.0))
    if env_curve is not None:
        xs, ys = _thin(env_curve[0], env_curve[1])
        parts.append(left.polyline(xs, ys, "#d62728", 1.5, dash="6,4"))
        exponent, logp = envelope
        ratio_panel = _Panel(560, 40, 400, 300, env_curve[0], env_curve[2], ylog=False)
        parts += ratio_panel.axes("k", "metric / envelope",
                                  f"ratio to (k+1)^{exponent:g} log^{logp:g}(k+1)")
        xs, ys = _thin(env_curve[0], env_curve[2])
        parts.append(ratio_panel.polyline(xs, ys, "#000", 1.5))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
