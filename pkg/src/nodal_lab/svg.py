"""Deterministic log-log SVG plots of scaling fits."""

from __future__ import annotations

import math
import os
from xml.sax.saxutils import escape

from .verification import ScalingFit

WIDTH, HEIGHT = 480, 360
_MARGIN = (64, 24, 24, 48)  # left, right, top, bottom


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def render_svg_loglog(fit: ScalingFit) -> str:
    """SVG text with data points, the fitted line and a slope annotation."""
    xs, ys = list(fit.log_lambda), list(fit.log_value)
    if len(xs) < 5:
        raise ValueError(f"need at least 5 fit points, got {len(xs)}")
    line_y = [fit.intercept + fit.slope * x for x in xs]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys + line_y), max(ys + line_y)
    padx, pady = 0.05 * (x1 - x0 or 1.0), 0.08 * (y1 - y0 or 1.0)
    x0, x1, y0, y1 = x0 - padx, x1 + padx, y0 - pady, y1 + pady
    left, right, top, bottom = _MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom

    def px(x):
        return left + pw * (x - x0) / (x1 - x0)

    def py(y):
        return top + ph * (1.0 - (y - y0) / (y1 - y0))

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f"<title>{escape(fit.observable)} vs eigenvalue: {escape(fit.ladder)}</title>",
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for t in _ticks(x0 + padx, x1 - padx):
        out.append(f'<text x="{px(t):.2f}" y="{HEIGHT - bottom + 16}" text-anchor="middle">'
                   f"{_fmt(t)}</text>")
    for t in _ticks(y0 + pady, y1 - pady):
        out.append(f'<text x="{left - 6}" y="{py(t) + 4:.2f}" text-anchor="end">{_fmt(t)}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{HEIGHT - 8}" text-anchor="middle">log lambda</text>')
    out.append(f'<text x="14" y="{top + ph / 2:.2f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {top + ph / 2:.2f})">log {escape(fit.observable)}</text>')
    xa, xb = min(xs), max(xs)
    out.append(
        f'<line class="fit" x1="{px(xa):.2f}" y1="{py(fit.intercept + fit.slope * xa):.2f}" '
        f'x2="{px(xb):.2f}" y2="{py(fit.intercept + fit.slope * xb):.2f}" stroke="#c33" stroke-width="1.5"/>'
    )
    for x, y in zip(xs, ys):
        out.append(f'<circle class="point" cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="#236"/>')
    err = "" if not math.isfinite(fit.slope_stderr) else f" (+/- {fit.slope_stderr:.2g})"
    out.append(f'<text class="slope" x="{left + 8}" y="{top + 16}">slope = {_fmt(fit.slope)}{escape(err)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_svg_loglog(fit: ScalingFit, path) -> str:
    """Write :func:`render_svg_loglog` output to ``path``; returns the path."""
    text = render_svg_loglog(fit)
    path = os.fspath(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path
