"""Standalone SVG rendering of closed curves."""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from xml.sax.saxutils import escape

import numpy as np

from .geometry import as_curve

_SVG_NS = "http://www.w3.org/2000/svg"


def emit_svg(curve, title: str = "", *, size: int = 480, precision: int = 10,
             margin: float = 0.08, stroke: str = "#1f4e9c", bounds=None) -> str:
    """SVG document with the closed polyline, an axes box and a title.

    Vertex coordinates are written in curve units with ``precision`` significant
    digits inside a group whose transform flips the y axis and fits ``bounds``
    (default: the curve's bounding box) into a square viewport, so the aspect
    ratio is preserved.
    """
    curve = as_curve(curve)
    x = curve.nodes
    if bounds is None:
        lo, hi = x.min(axis=0), x.max(axis=0)
    else:
        lo, hi = np.asarray(bounds[0], float), np.asarray(bounds[1], float)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-300))
    center = 0.5 * (lo + hi)
    box = size * (1 - 2 * margin)
    scale = box / span
    head = 28 if title else 0
    tx = size / 2 - scale * center[0]
    ty = head + size / 2 + scale * center[1]
    fmt = f"{{:.{precision}g}}"
    pts = " L ".join(f"{fmt.format(px)},{fmt.format(py)}" for px, py in x)
    parts = [
        f'<svg xmlns="{_SVG_NS}" width="{size}" height="{size + head}" '
        f'viewBox="0 0 {size} {size + head}">',
        f'<rect x="0" y="0" width="{size}" height="{size + head}" fill="white"/>',
        f'<rect class="axes" x="{size * margin:.3f}" y="{head + size * margin:.3f}" '
        f'width="{box:.3f}" height="{box:.3f}" fill="none" stroke="#888" stroke-width="1"/>',
    ]
    if title:
        parts.append(f'<text x="{size / 2:.1f}" y="20" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="14">{escape(title)}</text>')
    parts += [
        f'<g transform="matrix({scale:.12g} 0 0 {-scale:.12g} {tx:.12g} {ty:.12g})">',
        f'<path class="curve" d="M {pts} Z" fill="none" stroke="{stroke}" '
        f'stroke-width="1.5" vector-effect="non-scaling-stroke"/>',
        "</g>",
        "</svg>",
    ]
    return "\n".join(parts) + "\n"


def svg_vertices(svg: str) -> np.ndarray:
    """Vertices of the curve path in a document written by :func:`emit_svg`."""
    root = ET.fromstring(svg)
    for el in root.iter(f"{{{_SVG_NS}}}path"):
        if el.get("class") == "curve":
            nums = re.findall(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?", el.get("d"))
            return np.asarray(nums, dtype=float).reshape(-1, 2)
    raise ValueError("no curve path in SVG document")


def write_svg(curve, path, title: str = "", **style) -> None:
    with open(path, "w") as fh:
        fh.write(emit_svg(curve, title, **style))
