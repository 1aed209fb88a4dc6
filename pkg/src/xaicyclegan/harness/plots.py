"""Self-contained SVG line plots.

Output is a pure function of the input series: fixed layout, fixed colors,
fixed number formatting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")
PANEL_W, PANEL_H = 520, 300
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 60, 20, 34, 40


@dataclass
class Panel:
    title: str
    series: dict[str, list[tuple[float, float]]] = field(default_factory=dict)
    ylabel: str = ""


def _fmt(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def _label(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1000 or abs(v) < 0.01:
        return f"{v:.2e}"
    return f"{v:.3g}"


def _panel(panel: Panel, ox: float, oy: float) -> list[str]:
    out = [f'<g transform="translate({_fmt(ox)},{_fmt(oy)})">',
           f'<rect x="0" y="0" width="{PANEL_W}" height="{PANEL_H}" fill="white" stroke="#cccccc"/>',
           f'<text x="{PANEL_W / 2:.0f}" y="20" text-anchor="middle" font-size="14">{escape(panel.title)}</text>']
    pts = [(x, y) for s in panel.series.values() for x, y in s if math.isfinite(x) and math.isfinite(y)]
    pw, ph = PANEL_W - MARGIN_L - MARGIN_R, PANEL_H - MARGIN_T - MARGIN_B
    if not pts:
        out.append(f'<text x="{PANEL_W / 2:.0f}" y="{PANEL_H / 2:.0f}" text-anchor="middle" '
                   f'font-size="12" fill="#888888">no data</text></g>')
        return out
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def sx(x):
        return MARGIN_L + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return MARGIN_T + (1 - (y - y0) / (y1 - y0)) * ph

    out.append(f'<line x1="{MARGIN_L}" y1="{MARGIN_T + ph}" x2="{MARGIN_L + pw}" y2="{MARGIN_T + ph}" stroke="black"/>')
    out.append(f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{MARGIN_T + ph}" stroke="black"/>')
    for t in _ticks(y0, y1):
        y = sy(t)
        out.append(f'<line x1="{MARGIN_L - 4}" y1="{_fmt(y)}" x2="{MARGIN_L}" y2="{_fmt(y)}" stroke="black"/>')
        out.append(f'<text x="{MARGIN_L - 6}" y="{_fmt(y + 4)}" text-anchor="end" font-size="10">{_label(t)}</text>')
    for t in _ticks(x0, x1):
        x = sx(t)
        out.append(f'<line x1="{_fmt(x)}" y1="{MARGIN_T + ph}" x2="{_fmt(x)}" y2="{MARGIN_T + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{_fmt(x)}" y="{MARGIN_T + ph + 16}" text-anchor="middle" font-size="10">{_label(t)}</text>')
    out.append(f'<text x="{MARGIN_L + pw / 2:.0f}" y="{PANEL_H - 6}" text-anchor="middle" font-size="11">step</text>')
    if panel.ylabel:
        out.append(f'<text x="14" y="{MARGIN_T + ph / 2:.0f}" text-anchor="middle" font-size="11" '
                   f'transform="rotate(-90 14 {MARGIN_T + ph / 2:.0f})">{escape(panel.ylabel)}</text>')
    for i, (name, series) in enumerate(panel.series.items()):
        color = COLORS[i % len(COLORS)]
        coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in series if math.isfinite(x) and math.isfinite(y))
        if coords:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = MARGIN_T + 6 + 14 * i
        out.append(f'<line x1="{MARGIN_L + pw - 120}" y1="{ly}" x2="{MARGIN_L + pw - 100}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{MARGIN_L + pw - 96}" y="{ly + 4}" font-size="10">{escape(name)}</text>')
    out.append("</g>")
    return out


def render_svg(panels: list[Panel], columns: int = 2) -> str:
    columns = max(1, min(columns, len(panels) or 1))
    rows = max(1, math.ceil(len(panels) / columns))
    width, height = columns * PANEL_W, rows * PANEL_H
    lines = ['<?xml version="1.0" encoding="UTF-8"?>',
             f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}" font-family="sans-serif">']
    for i, panel in enumerate(panels):
        r, c = divmod(i, columns)
        lines.extend(_panel(panel, c * PANEL_W, r * PANEL_H))
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def write_svg(panels: list[Panel], path, columns: int = 2) -> None:
    Path(path).write_text(render_svg(panels, columns), encoding="utf-8")


def moving_average(values: list[float], window: int = 10) -> list[float]:
    """Trailing mean; entry i covers values[max(0, i-window+1) : i+1]."""
    out, acc = [], 0.0
    for i, v in enumerate(values):
        acc += v
        if i >= window:
            acc -= values[i - window]
        out.append(acc / min(i + 1, window))
    return out


def loss_panels(records: list[dict], window: int = 10) -> list[Panel]:
    """The per-run plot: adversarial, cycle and lambda curves."""
    steps = [r["step"] for r in records]

    def series(key):
        return list(zip(steps, moving_average([r[key] for r in records], window)))

    return [
        Panel("generator loss", {"loss_G": series("loss_G"), "loss_mask_adv": series("loss_mask_adv")}),
        Panel("discriminator loss", {"loss_D_A": series("loss_D_A"), "loss_D_B": series("loss_D_B")}),
        Panel("cycle loss", {"loss_cycle": series("loss_cycle")}),
        Panel("explanation weights", {"lambda_a": series("lambda_a"), "lambda_b": series("lambda_b")}),
    ]
