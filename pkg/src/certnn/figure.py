"""Standalone SVG of planar input/output ellipsoids and sampled trajectories."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .model import Network, forward
from .sets import Ellipsoid, sample

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
PANEL = 360
PAD = 30


def ellipse_boundary(E: Ellipsoid, n: int = 96) -> np.ndarray:
    t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    u = np.column_stack([np.cos(t), np.sin(t)])
    return np.linalg.solve(E.shape, (u - E.offset).T).T


class _Frame:
    """Maps data coordinates of one panel to SVG pixels with equal axis scaling."""

    def __init__(self, pts: np.ndarray, x0: float):
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        span = float(max(hi - lo)) * 1.1 or 1.0
        self.center = 0.5 * (lo + hi)
        self.scale = (PANEL - 2 * PAD) / span
        self.x0 = x0

    def __call__(self, p):
        p = np.atleast_2d(p)
        px = self.x0 + PANEL / 2 + (p[:, 0] - self.center[0]) * self.scale
        py = PANEL / 2 - (p[:, 1] - self.center[1]) * self.scale
        return np.column_stack([px, py])


def _path(points: np.ndarray) -> str:
    head, *rest = points
    parts = [f"M{head[0]:.2f},{head[1]:.2f}"] + [f"L{x:.2f},{y:.2f}" for x, y in rest]
    return " ".join(parts) + " Z"


def emit_figure(pairs, net: Network | None = None, samples: int = 500, seed: int = 0,
                title: str = "") -> str:
    """Left panel: input sets and samples; right panel: output sets and the sample images."""
    pairs = list(pairs)
    for inE, outE in pairs:
        if inE.dim != 2 or outE.dim != 2:
            raise ValueError("figures are limited to planar problems (n_x = n_y = 2)")
    if samples and net is None:
        raise ValueError("a network is needed to plot sample images")

    in_bd = [ellipse_boundary(i) for i, _ in pairs]
    out_bd = [ellipse_boundary(o) for _, o in pairs]
    xs, ys = [], []
    for j, (inE, _) in enumerate(pairs):
        if samples:
            x = sample(inE, samples, np.random.default_rng([seed, j]))
            xs.append(x)
            ys.append(forward(net, x))
    left = _Frame(np.vstack(in_bd + xs), 0.0)
    right = _Frame(np.vstack(out_bd + ys), float(PANEL))

    width, height = 2 * PANEL, PANEL + (24 if title else 0)
    shift = 24 if title else 0
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="17" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="14">{escape(title)}</text>')
    out.append(f'<g transform="translate(0,{shift})">')
    for frame, label in ((left, "input space"), (right, "output space")):
        out.append(f'<rect x="{frame.x0 + 4:.1f}" y="4" width="{PANEL - 8}" height="{PANEL - 8}" '
                   'fill="none" stroke="#999999" stroke-width="1"/>')
        out.append(f'<text x="{frame.x0 + 12:.1f}" y="20" font-family="sans-serif" '
                   f'font-size="12" fill="#444444">{label}</text>')
    for j in range(len(pairs)):
        color = PALETTE[j % len(PALETTE)]
        out.append(f'<g id="pair{j}" stroke="{color}" fill="{color}">')
        out.append(f'<path class="input-set" d="{_path(left(in_bd[j]))}" '
                   'fill="none" stroke-width="2"/>')
        out.append(f'<path class="output-set" d="{_path(right(out_bd[j]))}" '
                   'fill="none" stroke-width="2"/>')
        if samples:
            for (ax, ay), (bx, by) in zip(left(xs[j]), right(ys[j])):
                out.append(f'<circle class="input-point" cx="{ax:.2f}" cy="{ay:.2f}" r="1.2" '
                           'stroke="none" fill-opacity="0.5"/>')
                out.append(f'<circle class="output-point" cx="{bx:.2f}" cy="{by:.2f}" r="1.2" '
                           'stroke="none" fill-opacity="0.5"/>')
        out.append("</g>")
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
