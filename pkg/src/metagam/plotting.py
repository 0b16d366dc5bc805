"""Deterministic SVG figures: lines with confidence bands, stacked areas, panels.

Output is plain text with fixed number formatting, so identical inputs give
byte-identical files.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
MARGIN = (56, 16, 30, 44)  # left, right, top, bottom


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".") if math.isfinite(v) else "0"


def nice_ticks(lo: float, hi: float, n: int = 5) -> List[float]:
    """Round tick positions covering ``[lo, hi]``."""
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        return [lo]
    raw = (hi - lo) / max(n - 1, 1)
    mag = 10 ** math.floor(math.log10(raw))

    def count(step):
        return math.floor(hi / step + 1e-9) - math.ceil(lo / step - 1e-9) + 1

    # the round step whose tick count is closest to n (coarser on ties)
    step = min((m * mag for m in (1, 2, 2.5, 5, 10)), key=lambda s: (abs(count(s) - n), -s))
    start = math.ceil(lo / step - 1e-9) * step
    ticks, t = [], start
    while t <= hi + step * 1e-9:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _tick_label(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e5 or abs(v) < 1e-3:
        return f"{v:.3g}"
    return f"{v:.6g}"


def _segments(x, y):
    """Split a polyline at non-finite values."""
    ok = np.isfinite(x) & np.isfinite(y)
    runs, cur = [], []
    for i in range(len(x)):
        if ok[i]:
            cur.append(i)
        elif cur:
            runs.append(cur)
            cur = []
    if cur:
        runs.append(cur)
    return runs


@dataclass
class Figure:
    """A single set of axes rendered to SVG."""

    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    width: int = 480
    height: int = 320
    _items: List[Tuple] = field(default_factory=list)
    _legend: List[Tuple[str, str, str]] = field(default_factory=list)
    xlim: Optional[Tuple[float, float]] = None
    ylim: Optional[Tuple[float, float]] = None

    def line(self, x, y, label: str = "", color: Optional[str] = None, dash: bool = False,
             width: float = 1.5) -> "Figure":
        color = color or PALETTE[len(self._legend) % len(PALETTE)]
        self._items.append(("line", np.asarray(x, float), np.asarray(y, float), color, dash, width))
        if label:
            self._legend.append((label, color, "line"))
        return self

    def band(self, x, low, high, color: Optional[str] = None, opacity: float = 0.25,
             label: str = "") -> "Figure":
        color = color or PALETTE[len(self._legend) % len(PALETTE)]
        self._items.append(("band", np.asarray(x, float), np.asarray(low, float),
                            np.asarray(high, float), color, opacity))
        if label:
            self._legend.append((label, color, "band"))
        return self

    def stacked(self, x, fractions, labels: Sequence[str]) -> "Figure":
        x = np.asarray(x, float)
        fr = np.nan_to_num(np.asarray(fractions, float))
        base = np.zeros_like(x)
        for i, (row, label) in enumerate(zip(fr, labels)):
            color = PALETTE[i % len(PALETTE)]
            self._items.append(("band", x, base.copy(), base + row, color, 0.85))
            self._legend.append((label, color, "band"))
            base = base + row
        return self

    def points(self, x, y, label: str = "", color: Optional[str] = None) -> "Figure":
        color = color or PALETTE[len(self._legend) % len(PALETTE)]
        self._items.append(("points", np.asarray(x, float), np.asarray(y, float), color))
        if label:
            self._legend.append((label, color, "points"))
        return self

    def hline(self, y: float, color: str = "#888888") -> "Figure":
        self._items.append(("hline", float(y), color))
        return self

    def _limits(self):
        xs, ys = [], []
        for it in self._items:
            if it[0] in ("line", "points"):
                xs.append(it[1])
                ys.append(it[2])
            elif it[0] == "band":
                xs += [it[1], it[1]]
                ys += [it[2], it[3]]
            elif it[0] == "hline":
                ys.append(np.array([it[1]]))
        x = np.concatenate(xs) if xs else np.array([0.0, 1.0])
        y = np.concatenate(ys) if ys else np.array([0.0, 1.0])
        x, y = x[np.isfinite(x)], y[np.isfinite(y)]
        x0, x1 = self.xlim or ((x.min(), x.max()) if x.size else (0.0, 1.0))
        y0, y1 = self.ylim or ((y.min(), y.max()) if y.size else (0.0, 1.0))
        if x1 <= x0:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y1 <= y0:
            pad = abs(y0) * 0.1 or 0.5
            y0, y1 = y0 - pad, y1 + pad
        elif self.ylim is None:
            pad = (y1 - y0) * 0.04
            y0, y1 = y0 - pad, y1 + pad
        return float(x0), float(x1), float(y0), float(y1)

    def render_body(self, uid: str = "0") -> str:
        """SVG elements (without the outer ``<svg>``) in a ``width x height`` box.

        ``uid`` keeps clip-path ids unique when several figures share a document.
        """
        left, right, top, bottom = MARGIN
        pw, ph = self.width - left - right, self.height - top - bottom
        x0, x1, y0, y1 = self._limits()

        def sx(v):
            return left + (np.asarray(v, float) - x0) / (x1 - x0) * pw

        def sy(v):
            return top + ph - (np.asarray(v, float) - y0) / (y1 - y0) * ph

        out = [f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="white" stroke="#333333"/>']
        out.append(f'<clipPath id="clip{uid}"><rect x="{left}" y="{top}" '
                   f'width="{pw}" height="{ph}"/></clipPath>')
        clip = f'clip-path="url(#clip{uid})"'
        for t in nice_ticks(x0, x1):
            px = _fmt(float(sx(t)))
            out.append(f'<line x1="{px}" y1="{top + ph}" x2="{px}" y2="{top + ph + 4}" stroke="#333333"/>')
            out.append(f'<text x="{px}" y="{top + ph + 16}" font-size="10" text-anchor="middle">'
                       f'{_tick_label(t)}</text>')
        for t in nice_ticks(y0, y1):
            py = _fmt(float(sy(t)))
            out.append(f'<line x1="{left - 4}" y1="{py}" x2="{left}" y2="{py}" stroke="#333333"/>')
            out.append(f'<text x="{left - 6}" y="{py}" font-size="10" text-anchor="end" '
                       f'dominant-baseline="middle">{_tick_label(t)}</text>')
        body = []
        for it in self._items:
            kind = it[0]
            if kind == "band":
                _, x, lo, hi, color, op = it
                for run in _segments(x, lo + hi):
                    pts = [f"{_fmt(a)},{_fmt(b)}" for a, b in zip(sx(x[run]), sy(hi[run]))]
                    pts += [f"{_fmt(a)},{_fmt(b)}" for a, b in zip(sx(x[run][::-1]), sy(lo[run][::-1]))]
                    body.append(f'<polygon points="{" ".join(pts)}" fill="{color}" '
                                f'fill-opacity="{op}" stroke="none"/>')
            elif kind == "line":
                _, x, y, color, dash, w = it
                extra = ' stroke-dasharray="5,3"' if dash else ""
                for run in _segments(x, y):
                    pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(sx(x[run]), sy(y[run])))
                    body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                                f'stroke-width="{w}"{extra}/>')
            elif kind == "points":
                _, x, y, color = it
                for a, b in zip(sx(x), sy(y)):
                    if math.isfinite(a) and math.isfinite(b):
                        body.append(f'<circle cx="{_fmt(a)}" cy="{_fmt(b)}" r="2.5" fill="{color}"/>')
            elif kind == "hline":
                py = _fmt(float(sy(it[1])))
                body.append(f'<line x1="{left}" y1="{py}" x2="{left + pw}" y2="{py}" '
                            f'stroke="{it[2]}" stroke-dasharray="2,2"/>')
        out.append(f"<g {clip}>" + "".join(body) + "</g>")
        if self.title:
            out.append(f'<text x="{left + pw / 2:.1f}" y="{top - 10}" font-size="12" '
                       f'text-anchor="middle">{escape(self.title)}</text>')
        if self.xlabel:
            out.append(f'<text x="{left + pw / 2:.1f}" y="{self.height - 6}" font-size="11" '
                       f'text-anchor="middle">{escape(self.xlabel)}</text>')
        if self.ylabel:
            out.append(f'<text x="12" y="{top + ph / 2:.1f}" font-size="11" text-anchor="middle" '
                       f'transform="rotate(-90 12 {top + ph / 2:.1f})">{escape(self.ylabel)}</text>')
        for i, (label, color, kind) in enumerate(self._legend):
            ly = top + 10 + 13 * i
            lx = left + pw - 120
            if kind == "line":
                out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 14}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
            else:
                out.append(f'<rect x="{lx}" y="{ly - 4}" width="14" height="8" fill="{color}"/>')
            out.append(f'<text x="{lx + 18}" y="{ly + 3}" font-size="9">{escape(label)}</text>')
        return "\n".join(out)

    def to_svg(self) -> str:
        return _document(self.width, self.height, self.render_body())


def _document(width: int, height: int, body: str) -> str:
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif">\n{body}\n</svg>\n')


def panel(figures: Sequence[Figure], ncol: int = 2) -> str:
    """Lay figures out on a grid in one SVG document."""
    figures = list(figures)
    if not figures:
        return _document(10, 10, "")
    w = max(f.width for f in figures)
    h = max(f.height for f in figures)
    nrow = math.ceil(len(figures) / ncol)
    parts = []
    for i, f in enumerate(figures):
        r, c = divmod(i, ncol)
        parts.append(f'<g transform="translate({c * w},{r * h})">\n{f.render_body(str(i))}\n</g>')
    return _document(w * min(ncol, len(figures)), h * nrow, "\n".join(parts))


def _x_column(grid, term_id: Optional[str] = None):
    """Covariate on the horizontal axis: the first column that varies."""
    for c in grid.columns:
        v = grid[c].to_numpy()
        if v.dtype.kind in "fiu" and len(np.unique(v)) > 1:
            return c, v.astype(float)
    c = grid.columns[0]
    return c, np.arange(len(grid), dtype=float)


def meta_figure(meta, alpha: float = 0.05, show_cohorts: bool = True) -> Figure:
    """Pooled fit with its band, optionally over the individual cohort curves."""
    from .meta import confidence_band

    name, x = _x_column(meta.grid)
    low, high = confidence_band(meta, alpha)
    fig = Figure(title=f"{meta.term_id} ({meta.method})", xlabel=name, ylabel="estimate")
    if show_cohorts:
        for i, label in enumerate(meta.cohort_labels):
            y = np.where(meta.included[i], meta.cohort_fits[i], np.nan)
            fig.line(x, y, label=label, color=PALETTE[(i + 1) % len(PALETTE)], width=0.8)
    fig.band(x, low, high, color="#000000", opacity=0.2)
    fig.line(x, meta.pooled_fit, label="pooled", color="#000000", width=2.0)
    return fig


def dominance_figure(dom) -> Figure:
    name, x = _x_column(dom.grid)
    fig = Figure(title="Dominance", xlabel=name, ylabel="weight share", ylim=(0.0, 1.0))
    return fig.stacked(x, dom.fractions, dom.cohort_labels)


def heterogeneity_figure(het) -> Figure:
    name, x = _x_column(het.grid)
    fig = Figure(title="Heterogeneity (Q - df)", xlabel=name, ylabel="Q - df")
    fig.band(x, het.ci_low, het.ci_high, color=PALETTE[0])
    fig.line(x, het.Q - het.df_pointwise, color=PALETTE[0])
    fig.hline(0.0)
    return fig
