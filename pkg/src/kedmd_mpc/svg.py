"""Minimal SVG line plots (log or linear y axis) for traces and phase portraits."""
from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"]
DASHES = {"solid": "", "dash": "6,4", "dot": "2,3", "dashdot": "6,3,2,3"}
W, H = 640, 420
ML, MR, MT, MB = 70, 190, 30, 50


def _nice_ticks(lo, hi, count=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step) + 1)]


def _fmt(v):
    return f"{v:g}"


def line_plot(path, series, title="", xlabel="", ylabel="", logy=False, equal_axes=False) -> Path:
    """Write an SVG with one polyline per series.

    ``series`` is a list of dicts with keys ``x``, ``y``, ``label`` and the
    optional ``style`` (``solid``, ``dash``, ``dot``, ``dashdot``) and ``color``.
    Nonpositive values are dropped on a log axis.
    """
    cleaned = []
    for i, s in enumerate(series):
        x = np.asarray(s["x"], dtype=float)
        y = np.asarray(s["y"], dtype=float)
        ok = np.isfinite(x) & np.isfinite(y)
        if logy:
            ok &= y > 0
        if not np.any(ok):
            continue
        yy = np.log10(y[ok]) if logy else y[ok]
        cleaned.append((x[ok], yy, s.get("label", f"series {i}"), s.get("style", "solid"), s.get("color", PALETTE[i % len(PALETTE)])))
    if cleaned:
        xlo = min(c[0].min() for c in cleaned)
        xhi = max(c[0].max() for c in cleaned)
        ylo = min(c[1].min() for c in cleaned)
        yhi = max(c[1].max() for c in cleaned)
    else:
        xlo, xhi, ylo, yhi = 0.0, 1.0, 0.0, 1.0
    if logy:
        ylo, yhi = math.floor(ylo), math.ceil(yhi)
    if xhi == xlo:
        xhi = xlo + 1.0
    if yhi == ylo:
        yhi = ylo + 1.0
    pw, ph = W - ML - MR, H - MT - MB
    if equal_axes:
        span = max(xhi - xlo, yhi - ylo)
        xc, yc = 0.5 * (xlo + xhi), 0.5 * (ylo + yhi)
        xlo, xhi, ylo, yhi = xc - span / 2, xc + span / 2, yc - span / 2, yc + span / 2

    def sx(v):
        return ML + (v - xlo) / (xhi - xlo) * pw

    def sy(v):
        return MT + ph - (v - ylo) / (yhi - ylo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<rect x="{ML}" y="{MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    yt = list(range(int(ylo), int(yhi) + 1, max(1, (int(yhi) - int(ylo)) // 8 or 1))) if logy else _nice_ticks(ylo, yhi)
    for t in yt:
        if ylo <= t <= yhi:
            lab = f"1e{int(t)}" if logy else _fmt(t)
            out.append(f'<line x1="{ML}" y1="{sy(t):.2f}" x2="{ML + pw}" y2="{sy(t):.2f}" stroke="#ddd"/>')
            out.append(f'<text x="{ML - 6}" y="{sy(t) + 4:.2f}" font-size="11" text-anchor="end">{lab}</text>')
    for t in _nice_ticks(xlo, xhi):
        if xlo <= t <= xhi:
            out.append(f'<line x1="{sx(t):.2f}" y1="{MT + ph}" x2="{sx(t):.2f}" y2="{MT + ph + 5}" stroke="black"/>')
            out.append(f'<text x="{sx(t):.2f}" y="{MT + ph + 18}" font-size="11" text-anchor="middle">{_fmt(t)}</text>')
    for x, y, label, style, color in cleaned:
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
        dash = DASHES.get(style, "")
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash_attr} points="{pts}"/>')
    for i, (_, _, label, style, color) in enumerate(cleaned):
        ly = MT + 14 + 18 * i
        dash = DASHES.get(style, "")
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        out.append(f'<line x1="{ML + pw + 10}" y1="{ly}" x2="{ML + pw + 40}" y2="{ly}" stroke="{color}" stroke-width="1.5"{dash_attr}/>')
        out.append(f'<text x="{ML + pw + 46}" y="{ly + 4}" font-size="11">{escape(label)}</text>')
    out.append(f'<text x="{ML + pw / 2}" y="{MT - 10}" font-size="13" text-anchor="middle">{escape(title)}</text>')
    out.append(f'<text x="{ML + pw / 2}" y="{H - 10}" font-size="12" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{MT + ph / 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 16 {MT + ph / 2})">{escape(ylabel)}</text>'
    )
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path


def error_plot(path, traces, title="closed-loop error") -> Path:
    """``traces``: list of ``(label, errors, style)``; log-scale error against ``k``."""
    series = [{"x": np.arange(len(e)), "y": e, "label": lab, "style": st} for lab, e, st in traces]
    return line_plot(path, series, title=title, xlabel="k", ylabel="error", logy=True)


def phase_plot(path, trajectories, title="phase portrait") -> Path:
    """``trajectories``: list of ``(label, states, style)`` with 2-D states."""
    series = [{"x": s[:, 0], "y": s[:, 1], "label": lab, "style": st} for lab, s, st in trajectories]
    return line_plot(path, series, title=title, xlabel="x1", ylabel="x2", equal_axes=True)
