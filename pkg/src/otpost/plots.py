"""Minimal hand-emitted SVG scatter/overlay plots (no plotting dependency).

Only 2-D data. Produces valid standalone SVG with circles for sample
points and polylines for contours and sign curves.
"""

from __future__ import annotations

import numpy as np

__all__ = ["svg_overlay"]

_CONTOUR_COLORS = ["#d62728", "#2ca02c", "#1f77b4", "#9467bd", "#8c564b"]


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def svg_overlay(path, samples=None, contours=(), curves=(), size=520, margin=40,
                point_color="#888888", point_radius=1.2, title=None):
    """Write an SVG overlay of sample points, closed contours, open curves.

    samples: (N, 2) array or None. contours: iterables of (n, 2) arrays
    drawn closed. curves: drawn open (sign curves). Axes are scaled to the
    joint bounding box with a small margin.
    """
    groups = []
    if samples is not None and len(samples):
        groups.append(np.asarray(samples, dtype=float))
    groups += [np.asarray(c, dtype=float) for c in contours]
    groups += [np.asarray(c, dtype=float) for c in curves]
    if not groups:
        raise ValueError("nothing to plot")
    allpts = np.vstack(groups)
    lo = allpts.min(axis=0)
    hi = allpts.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    inner = size - 2 * margin

    def sx(x):
        return margin + (x - lo[0]) / span[0] * inner

    def sy(y):
        # SVG y grows downward
        return size - margin - (y - lo[1]) / span[1] * inner

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    if title:
        parts.append(
            f'<text x="{size / 2}" y="20" text-anchor="middle" '
            f'font-family="sans-serif" font-size="14">{title}</text>'
        )
    if samples is not None and len(samples):
        S = np.asarray(samples, dtype=float)
        parts.append(f'<g fill="{point_color}" fill-opacity="0.5">')
        for x, y in S:
            parts.append(
                f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="{point_radius}"/>'
            )
        parts.append("</g>")
    for i, c in enumerate(contours):
        c = np.asarray(c, dtype=float)
        pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in c)
        color = _CONTOUR_COLORS[i % len(_CONTOUR_COLORS)]
        parts.append(
            f'<polygon points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
    for c in curves:
        c = np.asarray(c, dtype=float)
        pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in c)
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="#111111" stroke-width="1.2"/>'
        )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
