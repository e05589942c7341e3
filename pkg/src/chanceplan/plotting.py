"""Static SVG snapshots of reach sets, triangle covers and density ellipses."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Ellipse, Polygon  # noqa: E402

from .reachability import ReachTube, tube_to_world  # noqa: E402
from .zonotope import TriangleCover, Zonotope2  # noqa: E402


def _ellipses(ax, mean, cov, color, levels=(1, 2, 3)):
    lam, vec = np.linalg.eigh(np.asarray(cov, float))
    ang = math.degrees(math.atan2(vec[1, 1], vec[0, 1]))
    for k in levels:
        ax.add_patch(Ellipse(mean, 2 * k * math.sqrt(lam[1]), 2 * k * math.sqrt(lam[0]), angle=ang,
                             fill=False, ec=color, lw=0.8, alpha=1.0 / k))


def _zonotope(ax, z: Zonotope2, **kw):
    v = z.vertices()
    if len(v) >= 3:
        ax.add_patch(Polygon(v, closed=True, **kw))


def plot_relaxation(path, region: Zonotope2, cover: TriangleCover | None = None, models=(), title: str = ""):
    """One buffered region, its triangle cover and the obstacle densities."""
    fig, ax = plt.subplots(figsize=(6, 6))
    if cover is not None:
        for tri in cover.vertices():
            ax.add_patch(Polygon(tri, closed=True, fill=False, ec="0.6", lw=0.4))
    _zonotope(ax, region, fill=True, fc="tab:blue", alpha=0.3, ec="tab:blue")
    for m in models:
        _ellipses(ax, m.mean(), m.cov(), "tab:red")
    lo, hi = region.bbox()
    pad = 0.3 * float(np.max(hi - lo)) + 1.0
    ax.set_xlim(lo[0] - pad, hi[0] + pad)
    ax.set_ylim(lo[1] - pad, hi[1] + pad)
    ax.set_aspect("equal")
    ax.set_title(title or "region, cover and density contours")
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_plan(path, tube: ReachTube, z0, p, field=None, trace=None, every: int = 5, lanes=None):
    """World reach sets of a plan at ``p`` with obstacle ellipses and an optional trace."""
    fig, ax = plt.subplots(figsize=(9, 5))
    world = tube_to_world(tube, z0)
    p = np.asarray(p, float)
    pts = []
    for j, (z, a) in enumerate(world, start=1):
        if (j - 1) % every:
            continue
        zp = Zonotope2(z.center + a @ p, z.generators)
        _zonotope(ax, zp, fill=True, fc="tab:green", alpha=0.15, ec="tab:green", lw=0.5)
        pts.append(zp.vertices())
        if field is not None:
            for (i, jj), m in field.pdfs.items():
                if jj == j:
                    _ellipses(ax, m.mean(), m.cov(), "tab:red", levels=(3,))
    if trace is not None:
        ax.plot(trace[:, 0], trace[:, 1], "k-", lw=1.0)
    if lanes is not None:
        for lane in lanes:
            for side in (-0.5, 0.5):
                off = lane.offset + side * 3.7
                if lane.axis == "x":
                    ax.axhline(off, color="0.8", lw=0.5)
                else:
                    ax.axvline(off, color="0.8", lw=0.5)
    allp = np.vstack(pts) if pts else np.zeros((1, 2))
    lo, hi = allp.min(axis=0) - 10, allp.max(axis=0) + 10
    ax.set_xlim(lo[0], hi[0])
    ax.set_ylim(lo[1], hi[1])
    ax.set_aspect("equal")
    ax.set_title(f"{tube.name} at p = {np.round(p, 3).tolist()}")
    fig.savefig(path, format="svg")
    plt.close(fig)
