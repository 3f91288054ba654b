"""Minimal SVG writer for rectangle-grid heatmaps.

Colors use a fixed diverging map: values are divided by the largest absolute
value in the grid, then -1 maps to blue ``#2166ac``, 0 to near-white
``#f7f7f7`` and +1 to red ``#b2182b`` with linear interpolation in RGB.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

LOW = (0x21, 0x66, 0xAC)
MID = (0xF7, 0xF7, 0xF7)
HIGH = (0xB2, 0x18, 0x2B)


def diverging_color(t: float) -> str:
    """Hex color for t in [-1, 1]."""
    t = float(np.clip(t, -1.0, 1.0))
    end = HIGH if t >= 0 else LOW
    w = abs(t)
    rgb = [round(m + (e - m) * w) for m, e in zip(MID, end)]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def heatmap_svg(values: np.ndarray, x_labels=None, y_labels=None, title: str = "", cell: float = 4.0) -> str:
    """SVG document with one rect per cell; row 0 of ``values`` is drawn at the bottom."""
    V = np.asarray(values, dtype=float)
    ny, nx = V.shape
    scale = np.abs(V).max()
    scale = scale if scale > 0 else 1.0
    margin_l, margin_t, margin_b = 60.0, 30.0, 40.0
    width = margin_l + nx * cell + 20
    height = margin_t + ny * cell + margin_b
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:g}" height="{height:g}" '
        f'viewBox="0 0 {width:g} {height:g}">',
        f'<text x="{margin_l:g}" y="18" font-family="sans-serif" font-size="13">{escape(title)}</text>',
        '<g shape-rendering="crispEdges">',
    ]
    for j in range(ny):
        y = margin_t + (ny - 1 - j) * cell
        for i in range(nx):
            x = margin_l + i * cell
            parts.append(
                f'<rect x="{x:g}" y="{y:g}" width="{cell:g}" height="{cell:g}" '
                f'fill="{diverging_color(V[j, i] / scale)}"/>'
            )
    parts.append("</g>")
    bottom = margin_t + ny * cell
    if x_labels is not None:
        parts.append(f'<text x="{margin_l:g}" y="{bottom + 15:g}" font-family="sans-serif" font-size="10">{x_labels[0]:g}</text>')
        parts.append(f'<text x="{margin_l + nx * cell:g}" y="{bottom + 15:g}" font-family="sans-serif" '
                     f'font-size="10" text-anchor="end">{x_labels[-1]:g}</text>')
    if y_labels is not None:
        parts.append(f'<text x="{margin_l - 5:g}" y="{bottom:g}" font-family="sans-serif" font-size="10" '
                     f'text-anchor="end">{y_labels[0]:g}</text>')
        parts.append(f'<text x="{margin_l - 5:g}" y="{margin_t + 8:g}" font-family="sans-serif" font-size="10" '
                     f'text-anchor="end">{y_labels[-1]:g}</text>')
    parts.append(f'<text x="{margin_l:g}" y="{height - 8:g}" font-family="sans-serif" font-size="10">'
                 f'color scale: |max| = {scale:.4g}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_heatmap_svg(path, values, **kw) -> None:
    with open(path, "w") as fh:
        fh.write(heatmap_svg(values, **kw))
