"""Minimal SVG boxplots with truth markers.

Boxes span the quartiles, whiskers reach the most extreme observation within
1.5 IQR of the box, points beyond are drawn as open circles and the true
value is an asterisk. Only the first comment line carries the build version,
so two runs with the same data differ at most there.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import metadata
from xml.sax.saxutils import escape

import numpy as np

WIDTH_PER_BOX = 28
HEIGHT = 320
MARGIN_LEFT = 56
MARGIN_RIGHT = 16
MARGIN_TOP = 32
MARGIN_BOTTOM = 72


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


@dataclass(frozen=True)
class BoxStats:
    q1: float
    median: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: tuple[float, ...]


def box_stats(values) -> BoxStats:
    """Quartiles, 1.5 IQR whiskers and outliers of a non-empty sample."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        raise ValueError("box statistics need at least one value")
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    outliers = tuple(float(x) for x in v[(v < lo_fence) | (v > hi_fence)])
    return BoxStats(float(q1), float(med), float(q3), float(inside.min()), float(inside.max()), outliers)


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def boxplot_svg(series, labels, truth=None, title: str = "", ylabel: str = "") -> str:
    """Render one boxplot per entry of ``series`` as an SVG document string.

    ``series`` is a list of 1-D samples, ``labels`` the matching tick labels
    and ``truth`` an optional list of true values (``None`` entries skip the
    marker).
    """
    if len(series) != len(labels):
        raise ValueError("series and labels differ in length")
    if truth is not None and len(truth) != len(series):
        raise ValueError("truth and series differ in length")
    stats = [box_stats(s) for s in series]
    finite = [x for s in series for x in np.ravel(s)]
    if truth is not None:
        finite += [t for t in truth if t is not None]
    lo, hi = (min(finite), max(finite)) if finite else (0.0, 1.0)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad

    k = len(series)
    width = MARGIN_LEFT + MARGIN_RIGHT + WIDTH_PER_BOX * max(k, 1)
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

    def y(v):
        return MARGIN_TOP + plot_h * (hi - v) / (hi - lo)

    out = [
        f"<!-- dynsbm {_version()} -->",
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{HEIGHT}" '
        f'viewBox="0 0 {width} {HEIGHT}" font-family="sans-serif" font-size="10">',
        f'<rect x="0" y="0" width="{width}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{width / 2:.2f}" y="18" text-anchor="middle" font-size="12">{escape(title)}</text>')
    # axis with five ticks
    x0 = MARGIN_LEFT
    out.append(f'<line x1="{x0}" y1="{MARGIN_TOP}" x2="{x0}" y2="{MARGIN_TOP + plot_h}" stroke="black"/>')
    for tick in np.linspace(lo, hi, 5):
        ty = _fmt(y(tick))
        out.append(f'<line x1="{x0 - 4}" y1="{ty}" x2="{x0}" y2="{ty}" stroke="black"/>')
        out.append(f'<text x="{x0 - 6}" y="{ty}" text-anchor="end" dominant-baseline="middle">{tick:.3g}</text>')
    if ylabel:
        cy = MARGIN_TOP + plot_h / 2
        out.append(
            f'<text x="12" y="{cy:.2f}" text-anchor="middle" transform="rotate(-90 12 {cy:.2f})">{escape(ylabel)}</text>'
        )

    half = WIDTH_PER_BOX * 0.3
    for i, (st, label) in enumerate(zip(stats, labels)):
        cx = MARGIN_LEFT + WIDTH_PER_BOX * (i + 0.5)
        l, r = _fmt(cx - half), _fmt(cx + half)
        c = _fmt(cx)
        out.append(f'<g class="box" data-label="{escape(str(label))}">')
        out.append(f'<line x1="{c}" y1="{_fmt(y(st.whisker_high))}" x2="{c}" y2="{_fmt(y(st.q3))}" stroke="black" stroke-dasharray="3,2"/>')
        out.append(f'<line x1="{c}" y1="{_fmt(y(st.q1))}" x2="{c}" y2="{_fmt(y(st.whisker_low))}" stroke="black" stroke-dasharray="3,2"/>')
        for w in (st.whisker_low, st.whisker_high):
            out.append(f'<line x1="{_fmt(cx - half / 2)}" y1="{_fmt(y(w))}" x2="{_fmt(cx + half / 2)}" y2="{_fmt(y(w))}" stroke="black"/>')
        top, bottom = y(st.q3), y(st.q1)
        out.append(
            f'<rect x="{l}" y="{_fmt(top)}" width="{_fmt(2 * half)}" height="{_fmt(bottom - top)}" '
            'fill="none" stroke="blue"/>'
        )
        out.append(f'<line x1="{l}" y1="{_fmt(y(st.median))}" x2="{r}" y2="{_fmt(y(st.median))}" stroke="red" stroke-width="1.5"/>')
        for o in st.outliers:
            out.append(f'<circle cx="{c}" cy="{_fmt(y(o))}" r="2.5" fill="none" stroke="red"/>')
        if truth is not None and truth[i] is not None:
            out.append(_asterisk(cx, y(truth[i])))
        out.append("</g>")
        ly = MARGIN_TOP + plot_h + 8
        out.append(
            f'<text x="{c}" y="{ly}" text-anchor="end" transform="rotate(-60 {c} {ly})">{escape(str(label))}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _asterisk(cx: float, cy: float, size: float = 4.0) -> str:
    parts = []
    for angle in (0.0, 60.0, 120.0):
        a = np.deg2rad(angle)
        dx, dy = size * np.sin(a), size * np.cos(a)
        parts.append(
            f'<line x1="{_fmt(cx - dx)}" y1="{_fmt(cy - dy)}" x2="{_fmt(cx + dx)}" y2="{_fmt(cy + dy)}" '
            'stroke="blue" stroke-width="1.2"/>'
        )
    return '<g class="truth">' + "".join(parts) + "</g>"


def write_boxplot(path, series, labels, truth=None, title: str = "", ylabel: str = "") -> None:
    with open(path, "w") as fh:
        fh.write(boxplot_svg(series, labels, truth, title, ylabel))
