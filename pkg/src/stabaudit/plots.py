"""Deterministic SVG rendering for scatter and box plots.

Output is plain text assembled in a fixed order with fixed float formatting,
so identical input always yields byte-identical documents.
"""

from __future__ import annotations

from html import escape
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyInput
from .model import TraitSpec

WIDTH = 420
HEIGHT = 420
MARGIN = 60


def _n(v: float) -> str:
    return f"{v:.2f}"


def _header(width, height, title):
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f"<title>{escape(title)}</title>",
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]


class AxisMap:
    """Maps trait values onto the square plot area (y grows upward)."""

    def __init__(self, spec: TraitSpec, width=WIDTH, height=HEIGHT, margin=MARGIN):
        self.spec = spec
        self.left = margin
        self.top = margin // 2
        self.w = width - margin - margin // 2
        self.h = height - margin - margin // 2

    def x(self, v: float) -> float:
        return self.left + (v - self.spec.min) / self.spec.span * self.w

    def y(self, v: float) -> float:
        return self.top + self.h - (v - self.spec.min) / self.spec.span * self.h


def render_scatter(
    control: Sequence[float],
    treatment: Sequence[float],
    spec: TraitSpec,
    title: str = "",
    x_label: str = "control",
    y_label: str = "treatment",
) -> str:
    """Control on x, treatment on y, with the y = x line for reference."""
    if len(control) == 0 or len(control) != len(treatment):
        raise EmptyInput("scatter needs at least one (control, treatment) pair")
    ax = AxisMap(spec)
    lo, hi = spec.min, spec.max
    out = _header(WIDTH, HEIGHT, title or spec.name)
    out.append(
        f'<rect class="frame" x="{_n(ax.left)}" y="{_n(ax.top)}" width="{_n(ax.w)}" height="{_n(ax.h)}" '
        'fill="none" stroke="black"/>'
    )
    out.append(
        f'<line class="identity" x1="{_n(ax.x(lo))}" y1="{_n(ax.y(lo))}" x2="{_n(ax.x(hi))}" y2="{_n(ax.y(hi))}" '
        'stroke="gray" stroke-dasharray="4 3"/>'
    )
    for frac in (0.0, 0.5, 1.0):
        v = lo + frac * spec.span
        out.append(f'<text x="{_n(ax.x(v))}" y="{_n(ax.top + ax.h + 16)}" font-size="10" text-anchor="middle">{v:g}</text>')
        out.append(f'<text x="{_n(ax.left - 6)}" y="{_n(ax.y(v) + 3)}" font-size="10" text-anchor="end">{v:g}</text>')
    out.append(f'<text x="{_n(ax.left + ax.w / 2)}" y="{HEIGHT - 8}" font-size="12" text-anchor="middle">{escape(x_label)}</text>')
    out.append(
        f'<text x="14" y="{_n(ax.top + ax.h / 2)}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {_n(ax.top + ax.h / 2)})">{escape(y_label)}</text>'
    )
    out.append('<g class="points" fill="steelblue" fill-opacity="0.6">')
    for c, t in zip(control, treatment):
        out.append(f'<circle cx="{_n(ax.x(c))}" cy="{_n(ax.y(t))}" r="3"/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def box_stats(values: Sequence[float]) -> dict:
    """Median, quartiles (linear interpolation), 1.5 IQR whiskers, outliers."""
    v = np.sort(np.asarray(values, dtype=float))
    if len(v) == 0:
        raise EmptyInput("box plot needs at least one value per group")
    q1, med, q3 = (float(x) for x in np.percentile(v, [25, 50, 75]))
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    return {
        "median": med,
        "q1": q1,
        "q3": q3,
        "whisker_low": float(inside.min()),
        "whisker_high": float(inside.max()),
        "outliers": [float(x) for x in v[(v < lo_fence) | (v > hi_fence)]],
    }


def render_box(
    samples: Mapping[str, Sequence[float]],
    title: str = "normalized L1 distance",
    skipped: Mapping[str, int] | None = None,
) -> str:
    """One box per label, in the mapping's order; skipped groups are annotated, not drawn."""
    if not samples and not skipped:
        raise EmptyInput("box plot needs at least one group")
    stats = {label: box_stats(vals) for label, vals in samples.items()}
    skipped = dict(skipped or {})
    top_val = max([s["whisker_high"] for s in stats.values()] + [o for s in stats.values() for o in s["outliers"]] + [0.0])
    ymax = top_val * 1.1 if top_val > 0 else 1.0

    labels = list(stats) + [k for k in skipped if k not in stats]
    slot = 70
    width = max(WIDTH, MARGIN + slot * len(labels) + MARGIN // 2)
    height = HEIGHT
    top, plot_h = MARGIN // 2, HEIGHT - MARGIN - MARGIN // 2

    def y(v):
        return top + plot_h - v / ymax * plot_h

    out = _header(width, height, title)
    out.append(f'<line x1="{MARGIN}" y1="{_n(y(0))}" x2="{width - MARGIN // 2}" y2="{_n(y(0))}" stroke="black"/>')
    out.append(f'<line x1="{MARGIN}" y1="{_n(top)}" x2="{MARGIN}" y2="{_n(y(0))}" stroke="black"/>')
    for frac in (0.0, 0.5, 1.0):
        v = frac * ymax
        out.append(f'<text x="{MARGIN - 6}" y="{_n(y(v) + 3)}" font-size="10" text-anchor="end">{v:.3g}</text>')
    for i, label in enumerate(labels):
        cx = MARGIN + slot * i + slot / 2
        out.append(f'<text x="{_n(cx)}" y="{_n(y(0) + 16)}" font-size="10" text-anchor="middle">{escape(label)}</text>')
        if label not in stats:
            out.append(
                f'<text class="skipped" x="{_n(cx)}" y="{_n(top + plot_h / 2)}" font-size="9" '
                f'text-anchor="middle">skipped (n={skipped[label]})</text>'
            )
            continue
        s = stats[label]
        half = slot * 0.3
        out.append(f'<g class="box" data-label="{escape(label)}">')
        out.append(f'<line x1="{_n(cx)}" y1="{_n(y(s["whisker_low"]))}" x2="{_n(cx)}" y2="{_n(y(s["q1"]))}" stroke="black"/>')
        out.append(f'<line x1="{_n(cx)}" y1="{_n(y(s["q3"]))}" x2="{_n(cx)}" y2="{_n(y(s["whisker_high"]))}" stroke="black"/>')
        for w in ("whisker_low", "whisker_high"):
            out.append(f'<line x1="{_n(cx - half / 2)}" y1="{_n(y(s[w]))}" x2="{_n(cx + half / 2)}" y2="{_n(y(s[w]))}" stroke="black"/>')
        out.append(
            f'<rect x="{_n(cx - half)}" y="{_n(y(s["q3"]))}" width="{_n(2 * half)}" '
            f'height="{_n(y(s["q1"]) - y(s["q3"]))}" fill="lightsteelblue" stroke="black"/>'
        )
        out.append(
            f'<line class="median" x1="{_n(cx - half)}" y1="{_n(y(s["median"]))}" x2="{_n(cx + half)}" '
            f'y2="{_n(y(s["median"]))}" stroke="darkred" stroke-width="2"/>'
        )
        for o in s["outliers"]:
            out.append(f'<circle class="outlier" cx="{_n(cx)}" cy="{_n(y(o))}" r="2.5" fill="none" stroke="black"/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
