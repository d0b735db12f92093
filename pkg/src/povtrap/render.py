"""Deterministic SVG state-space plots of basin grids.

2-D grids are drawn as a single heatmap. 3-D grids are drawn as a row of
slices along one axis (default: the last coordinate); each attractor is drawn
once, in the slice nearest its own coordinate on that axis.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .basins import UNRESOLVED, BasinGrid

BASIN_FILLS = ("#add8e6", "#d8bfd8", "#c1e1c1", "#ffe4b5", "#f4c2c2")
DISC_FILLS = ("#1f4fa3", "#6a2c91", "#2e7d32", "#b8860b", "#b22222")
UNRESOLVED_FILL = "#bebebe"

PANEL_PX = 320.0
MARGIN = 48.0
GAP = 36.0


def _f(x: float) -> str:
    s = f"{x:.3f}".rstrip("0").rstrip(".")
    return "0" if s == "-0" else s


def _fill(label: int) -> str:
    return UNRESOLVED_FILL if label == UNRESOLVED else BASIN_FILLS[label % len(BASIN_FILLS)]


def _panel(labels2d, box2d, names, attractors2d, x0, y0, size, title):
    nx, ny = labels2d.shape
    cw, ch = size / nx, size / ny
    out = ['<g class="panel">']
    if title:
        out.append(f'<text x="{_f(x0 + size / 2)}" y="{_f(y0 - 8)}" text-anchor="middle">{escape(title)}</text>')
    for i in range(nx):
        for j in range(ny):
            # y axis points up: row j=0 sits at the bottom
            out.append(f'<rect x="{_f(x0 + i * cw)}" y="{_f(y0 + size - (j + 1) * ch)}" '
                       f'width="{_f(cw)}" height="{_f(ch)}" fill="{_fill(int(labels2d[i, j]))}"/>')
    (xlo, xhi), (ylo, yhi) = box2d
    out.append(f'<line x1="{_f(x0)}" y1="{_f(y0 + size)}" x2="{_f(x0 + size)}" y2="{_f(y0 + size)}" stroke="black"/>')
    out.append(f'<line x1="{_f(x0)}" y1="{_f(y0)}" x2="{_f(x0)}" y2="{_f(y0 + size)}" stroke="black"/>')
    for v, anchor, px in ((xlo, "start", x0), (xhi, "end", x0 + size)):
        out.append(f'<text x="{_f(px)}" y="{_f(y0 + size + 14)}" text-anchor="{anchor}">{_f(v)}</text>')
    for v, py in ((ylo, y0 + size), (yhi, y0 + 10)):
        out.append(f'<text x="{_f(x0 - 4)}" y="{_f(py)}" text-anchor="end">{_f(v)}</text>')
    out.append(f'<text x="{_f(x0 + size / 2)}" y="{_f(y0 + size + 30)}" text-anchor="middle">{names[0]}</text>')
    out.append(f'<text x="{_f(x0 - 30)}" y="{_f(y0 + size / 2)}" text-anchor="middle" '
               f'transform="rotate(-90 {_f(x0 - 30)} {_f(y0 + size / 2)})">{names[1]}</text>')
    for idx, (px, py), full in attractors2d:
        cx = x0 + np.clip((px - xlo) / (xhi - xlo), 0, 1) * size
        cy = y0 + size - np.clip((py - ylo) / (yhi - ylo), 0, 1) * size
        label = ", ".join(f"{k}={_f(v)}" for k, v in full.items())
        out.append(f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="6" fill="{DISC_FILLS[idx % len(DISC_FILLS)]}" '
                   f'stroke="black"><title>attractor {idx}: {escape(label)}</title></circle>')
    out.append("</g>")
    return out


def render_state_space(grid: BasinGrid, slice_axis: str | None = None, slice_count: int = 4,
                       cell_px: float | None = None) -> str:
    """SVG text for ``grid``; identical inputs give identical bytes."""
    names = grid.model.active_coords
    attractors = list(grid.attractors)
    if grid.dimension == 2:
        size = PANEL_PX if cell_px is None else cell_px * max(grid.resolution)
        atts = [(i, tuple(a.state), dict(zip(names, a.state.tolist()))) for i, a in enumerate(attractors)]
        body = _panel(grid.labels, grid.box, names, atts, MARGIN, MARGIN, size, "")
        width = height = size + 2 * MARGIN
    elif grid.dimension == 3:
        axis = names.index(slice_axis) if slice_axis is not None else 2
        plane = [k for k in range(3) if k != axis]
        n_axis = grid.resolution[axis]
        count = min(slice_count, n_axis)
        picks = np.unique(np.round(np.linspace(0, n_axis - 1, count)).astype(int))
        centers = grid.axis_centers(axis)[picks]
        size = PANEL_PX if cell_px is None else cell_px * max(grid.resolution[k] for k in plane)
        home = {}
        for i, a in enumerate(attractors):
            home.setdefault(int(np.argmin(np.abs(centers - a.state[axis]))), []).append(i)
        body = []
        for s, (pick, c) in enumerate(zip(picks, centers)):
            labels2d = np.take(grid.labels, pick, axis=axis)
            atts = [(i, (attractors[i].state[plane[0]], attractors[i].state[plane[1]]),
                     dict(zip(names, attractors[i].state.tolist()))) for i in home.get(s, [])]
            x0 = MARGIN + s * (size + GAP + MARGIN)
            body += _panel(labels2d, [grid.box[k] for k in plane], [names[k] for k in plane], atts,
                           x0, MARGIN, size, f"{names[axis]} = {_f(c)}")
        width = len(picks) * (size + GAP + MARGIN) + MARGIN
        height = size + 2 * MARGIN
    else:
        raise ValueError(f"cannot render a {grid.dimension}-dimensional grid")

    head = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" height="{_f(height)}" '
        f'viewBox="0 0 {_f(width)} {_f(height)}" font-family="sans-serif" font-size="11">',
        f"<desc>{escape(grid.model.id)} basins, resolution {'x'.join(map(str, grid.resolution))}</desc>",
    ]
    return "\n".join(head + body + ["</svg>"]) + "\n"
