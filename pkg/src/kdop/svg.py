"""Deterministic SVG rendering of a justification report.

Three panels side by side: the module contribution bar, the attention
heatmap (time x dynamic feature) and the top static importances.
"""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

BAR_W, BAR_H = 40, 300
CELL_W, CELL_H = 26, 12
IMP_W = 220
MARGIN = 20
COLORS = {"dynamic": "#3b6fb6", "static": "#e08a2c"}


def _f(x):
    return f"{x:.3f}".rstrip("0").rstrip(".")


def _heat_color(x, vmax):
    # white at 0, dark blue at the matrix maximum
    t = 0.0 if vmax <= 0 else min(max(x / vmax, 0.0), 1.0)
    r = round(255 - t * (255 - 8))
    g = round(255 - t * (255 - 48))
    b = round(255 - t * (255 - 107))
    return f"#{r:02x}{g:02x}{b:02x}"


def contribution_bar(w_dynamic, w_static, x0=MARGIN, y0=MARGIN + 30):
    h_dyn = BAR_H * w_dynamic
    h_stat = BAR_H - h_dyn
    return [
        f'<g class="contribution">',
        f'<rect class="segment dynamic" x="{_f(x0)}" y="{_f(y0)}" width="{BAR_W}" '
        f'height="{_f(h_dyn)}" fill="{COLORS["dynamic"]}"/>',
        f'<rect class="segment static" x="{_f(x0)}" y="{_f(y0 + h_dyn)}" width="{BAR_W}" '
        f'height="{_f(h_stat)}" fill="{COLORS["static"]}"/>',
        f'<text x="{_f(x0)}" y="{_f(y0 - 8)}" font-size="10">modules</text>',
        f'<text x="{_f(x0 + BAR_W + 4)}" y="{_f(y0 + h_dyn / 2)}" font-size="9">'
        f'dyn {w_dynamic:.0%}</text>',
        f'<text x="{_f(x0 + BAR_W + 4)}" y="{_f(y0 + h_dyn + h_stat / 2)}" font-size="9">'
        f'static {w_static:.0%}</text>',
        "</g>",
    ]


def attention_heatmap(attention, feature_names, time_labels, x0, y0):
    A = np.asarray(attention, dtype=np.float64)
    vmax = float(A.max()) if A.size else 0.0
    parts = ['<g class="attention">',
             f'<text x="{_f(x0)}" y="{_f(y0 - 22)}" font-size="10">attention (max {vmax:.3g})</text>']
    for j, name in enumerate(feature_names):
        parts.append(f'<text x="{_f(x0 + j * CELL_W + 2)}" y="{_f(y0 - 4)}" font-size="7">'
                     f'{escape(str(name))[:8]}</text>')
    for t in range(A.shape[0]):
        parts.append(f'<text x="{_f(x0 - 2)}" y="{_f(y0 + t * CELL_H + 9)}" font-size="7" '
                     f'text-anchor="end">{escape(time_labels[t])}</text>')
        for j in range(A.shape[1]):
            parts.append(
                f'<rect class="cell" x="{_f(x0 + j * CELL_W)}" y="{_f(y0 + t * CELL_H)}" '
                f'width="{CELL_W}" height="{CELL_H}" fill="{_heat_color(A[t, j], vmax)}">'
                f'<title>{escape(time_labels[t])} {escape(str(feature_names[j]))}: {A[t, j]:.4f}'
                f'</title></rect>')
    parts.append("</g>")
    return parts


def importance_bars(items, x0, y0):
    parts = ['<g class="importance">',
             f'<text x="{_f(x0)}" y="{_f(y0 - 8)}" font-size="10">static importance</text>']
    top = max((v for _, v in items), default=0.0)
    for r, (name, value) in enumerate(items):
        w = 0.0 if top <= 0 else (IMP_W - 90) * value / top
        y = y0 + r * 16
        parts.append(f'<text x="{_f(x0)}" y="{_f(y + 10)}" font-size="8">{escape(str(name))[:14]}</text>')
        parts.append(f'<rect class="bar" x="{_f(x0 + 80)}" y="{_f(y)}" width="{_f(w)}" height="12" '
                     f'fill="{COLORS["static"]}"/>')
        parts.append(f'<text x="{_f(x0 + 84 + w)}" y="{_f(y + 10)}" font-size="8">{value:.3f}</text>')
    parts.append("</g>")
    return parts


def render(report) -> str:
    """SVG document for a :class:`~kdop.pipeline.JustificationReport`."""
    A = np.asarray(report.attention)
    T, v = A.shape
    heat_x = MARGIN + BAR_W + 110
    heat_y = MARGIN + 40
    imp_x = heat_x + v * CELL_W + 30
    width = imp_x + IMP_W + MARGIN
    height = max(heat_y + T * CELL_H, MARGIN + 30 + BAR_H, heat_y + 16 * len(report.static_importance)) + MARGIN
    title = (f"{report.patient_id}: p={report.probability:.3f} "
             f"(gamma {report.gamma:.3f}) -> predicted {report.label}")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{_f(height)}" '
        f'viewBox="0 0 {width} {_f(height)}" font-family="sans-serif">',
        f'<text x="{MARGIN}" y="14" font-size="11">{escape(title)}</text>',
    ]
    parts += contribution_bar(report.w_dynamic, report.w_static)
    parts += attention_heatmap(A, report.dynamic_names, report.time_labels, heat_x, heat_y)
    parts += importance_bars(report.static_importance, imp_x, heat_y)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
