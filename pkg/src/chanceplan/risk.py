"""Closed-form over-approximation of collision risk and its gradient.

Each right triangle ``S`` of a cover is shifted by ``A_j p``.  Over the
shifted triangle the density is bounded above by the quadratic

    f(a) + grad f(a) . (w - a) + 1/2 (w - a)^T H_S (w - a),   a = anchor + A_j p,

where ``H_S`` bounds the Hessian element-wise over the box hull of
``S + A_j P`` (or of ``S + A_j p`` when certifying a single parameter).
Because ``w - a`` keeps one sign pattern over the triangle, the
element-wise bound is enough.  The quadratic integrates in closed form
through the affine map of the triangle onto the canonical simplex.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import intervals as iv
from .uncertainty import _PAD, Gaussian, ObstacleField, PdfModel, _gauss_split_bounds, _q_range
from .zonotope import RightTriangle, TriangleCover, Zonotope2, build_cover

# constant vectors of the simplex quadrature identity
_QUAD_L = np.full(2, 1.0 / (4.0 * math.sqrt(3.0)))
_QUAD_R = np.full(2, 1.0 / (2.0 * math.sqrt(3.0)))
_QUAD_W = np.array([[2.0, 1.0], [1.0, 2.0]])
_THIRD = np.full(2, 1.0 / 3.0)


@dataclass(frozen=True)
class TriangleRelaxation:
    triangle: RightTriangle
    h_upper: np.ndarray
    h_lower: np.ndarray

    @property
    def a_s(self) -> np.ndarray:
        l1, l2 = self.triangle.legs
        o = self.triangle.orient
        return np.diag([o / l1, o / l2])

    @property
    def h_hat(self) -> np.ndarray:
        a_inv = np.linalg.inv(self.a_s)
        return a_inv.T @ self.h_upper @ a_inv


def param_box_offsets(a_j, p_lo, p_hi):
    """Bounding box (lo, hi) of ``A_j P`` for the box ``P = [p_lo, p_hi]``."""
    a_j = np.asarray(a_j, dtype=float)
    x, y = a_j * np.asarray(p_lo, float), a_j * np.asarray(p_hi, float)
    return np.minimum(x, y).sum(axis=-1), np.maximum(x, y).sum(axis=-1)


def triangle_boxes(anchors, orient, legs):
    """Axis-aligned bounding boxes of triangles."""
    ext = orient[:, None] * np.asarray(legs)[None, :]
    return np.minimum(anchors, anchors + ext), np.maximum(anchors, anchors + ext)


def hessian_enclosure(m: PdfModel, lo, hi, split: int = 1):
    """Element-wise Hessian bounds over boxes ``[lo, hi]`` (n, 2), split per axis."""
    return m.hessian_enclosure(lo, hi, split)


def relax_triangle(t: RightTriangle, m: PdfModel, a_j, p_lo, p_hi, split: int = 1) -> TriangleRelaxation:
    """Hessian enclosure of ``m`` over the box hull of ``t + A_j P``."""
    lo, hi = triangle_boxes(t.anchor[None], np.array([t.orient]), t.legs)
    olo, ohi = param_box_offsets(a_j, p_lo, p_hi)
    h_lo, h_up = hessian_enclosure(m, lo + olo, hi + ohi, split)
    return TriangleRelaxation(t, h_up[0], h_lo[0])


def _closed_form(anchors, orient, legs, h_s, m: PdfModel, a_j, p, grad=False):
    """Vectorised closed-form integral over shifted triangles.

    Returns per-triangle values and, if requested, the per-triangle gradient
    with respect to the anchor shift ``w`` (n, 2).
    """
    l1, l2 = legs
    area = 0.5 * l1 * l2                       # equals 1 / (2 det A_S)
    shift = np.asarray(a_j, float) @ np.asarray(p, float)
    a = anchors + shift
    f = m.value(a)
    if not np.all(np.isfinite(f)):
        raise ValueError("non-finite density at a triangle anchor")
    df = m.grad(a)
    a_inv = orient[:, None] * np.array([l1, l2])[None, :]     # diagonal of A_S^-1
    # H_hat = A_S^-T H_S A_S^-1 for diagonal A_S
    h_hat = h_s * a_inv[:, :, None] * a_inv[:, None, :]
    quad = np.einsum("i,nij,j->n", _QUAD_L, h_hat * _QUAD_W, _QUAD_R)
    lin = np.einsum("ni,ni,i->n", df, a_inv, _THIRD)
    vals = area * (f + quad + lin)
    if not grad:
        return vals, None
    hess = m.hessian(a)
    gw = area * (df + np.einsum("i,ni,nij->nj", _THIRD, a_inv, hess))
    return vals, gw


@njit(cache=True)
def _neumaier(s, c, x):
    t = s + x
    if abs(s) >= abs(x):
        c += (s - t) + x
    else:
        c += (x - t) + s
    return t, c


@njit(cache=True)
def _gauss_point_block(anchors, orient, l1, l2, shift, mu, prec, norm, split, tri_tol,
                       pad, rel, absr, lower):
    """Point-enclosure evaluation of one Gaussian pair, one triangle at a time.

    Mirrors ``_split_live``, ``Gaussian.hessian_enclosure`` and
    ``_closed_form`` fused into one pass.  Returns the closed-form sum, the
    lower-variant sum, the density-ceiling mass of pruned triangles, the
    anchor-shift gradient and the count of negative triangle values.  Sums
    are compensated and run in cover order.
    """
    area = 0.5 * l1 * l2
    p00, p01, p11 = prec[0, 0], prec[0, 1], prec[1, 1]
    blo = np.empty((1, 2))
    bhi = np.empty((1, 2))
    h_lo = np.empty((1, 2, 2))
    h_up = np.empty((1, 2, 2))
    sv, cv, sl, cl, sd, cd = 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    gx, cgx, gy, cgy = 0.0, 0.0, 0.0, 0.0
    neg = 0
    for n in range(anchors.shape[0]):
        ax = anchors[n, 0] + shift[0]
        ay = anchors[n, 1] + shift[1]
        ex = orient[n] * l1
        ey = orient[n] * l2
        blo[0, 0], bhi[0, 0] = min(ax, ax + ex), max(ax, ax + ex)
        blo[0, 1], bhi[0, 1] = min(ay, ay + ey), max(ay, ay + ey)
        qmin, _ = _q_range(blo[0, 0] - mu[0], bhi[0, 0] - mu[0], blo[0, 1] - mu[1], bhi[0, 1] - mu[1],
                           p00, p01, p11)
        ceil = norm * np.exp(-0.5 * qmin * (1 - pad)) * (1 + pad) * area
        if ceil < tri_tol:
            sd, cd = _neumaier(sd, cd, ceil)
            continue
        _gauss_split_bounds(blo, bhi, mu, prec, norm, split, pad, rel, absr, h_lo, h_up)
        dx, dy = ax - mu[0], ay - mu[1]
        g0 = dx * p00 + dy * p01
        g1 = dx * p01 + dy * p11
        f = norm * np.exp(-0.5 * (dx * g0 + dy * g1))
        df0, df1 = -f * g0, -f * g1
        lin = (df0 * ex + df1 * ey) / 3.0
        hu = (2.0 * h_up[0, 0, 0] * ex * ex + 2.0 * h_up[0, 0, 1] * ex * ey
              + 2.0 * h_up[0, 1, 1] * ey * ey) / 24.0
        v = area * (f + hu + lin)
        if v < 0:
            neg += 1
        sv, cv = _neumaier(sv, cv, v)
        if lower:
            hl = (2.0 * h_lo[0, 0, 0] * ex * ex + 2.0 * h_lo[0, 0, 1] * ex * ey
                  + 2.0 * h_lo[0, 1, 1] * ey * ey) / 24.0
            sl, cl = _neumaier(sl, cl, area * (f + hl + lin))
        h00 = f * (g0 * g0 - p00)
        h01 = f * (g0 * g1 - p01)
        h11 = f * (g1 * g1 - p11)
        gx, cgx = _neumaier(gx, cgx, area * (df0 + (ex * h00 + ey * h01) / 3.0))
        gy, cgy = _neumaier(gy, cgy, area * (df1 + (ex * h01 + ey * h11) / 3.0))
    return sv + cv, sl + cl, sd + cd, gx + cgx, gy + cgy, neg

def _single(t: RightTriangle, h, m, a_j, p, grad=False):
    vals, gw = _closed_form(t.anchor[None], np.array([float(t.orient)]), t.legs, h[None], m, a_j, p, grad)
    if grad:
        return gw[0] @ np.asarray(a_j, float)
    return float(vals[0])


def integrate_relaxed(t: RightTriangle, rel: TriangleRelaxation, m: PdfModel, a_j, p) -> float:
    """Integral of the quadratic upper bound over ``t + A_j p``."""
    return _single(t, rel.h_upper, m, a_j, p)


def integrate_relaxed_grad(t: RightTriangle, rel: TriangleRelaxation, m: PdfModel, a_j, p) -> np.ndarray:
    """Exact p-gradient of :func:`integrate_relaxed` (``H_S`` held fixed)."""
    return _single(t, rel.h_upper, m, a_j, p, grad=True)


def integrate_relaxed_lower(t: RightTriangle, rel: TriangleRelaxation, m: PdfModel, a_j, p) -> float:
    """Same closed form with the Hessian infimum; an under-approximation."""
    return _single(t, rel.h_lower, m, a_j, p)


@dataclass
class RiskReport:
    total: float
    per_pair: dict
    gradient: np.ndarray
    triangle_count: int
    wall_time: float
    negative_triangles: int = 0
    pruned_pairs: int = 0
    lower_total: float | None = None


@dataclass
class _PairBlock:
    key: tuple
    model: PdfModel
    a_j: np.ndarray
    cover: TriangleCover | None
    zlo: np.ndarray | None = None       # bounding box of the unshifted region
    zhi: np.ndarray | None = None
    tri_lo: np.ndarray | None = None    # triangle bounding boxes before the shift
    tri_hi: np.ndarray | None = None
    h_up: np.ndarray | None = None
    h_lo: np.ndarray | None = None
    live: np.ndarray | None = None      # triangles evaluated in closed form (box mode)
    dead_mass: float = 0.0              # mass bound of the other triangles (box mode)
    bound: float | None = None          # set when the pair is pruned


ENCLOSURES = ("box", "point")


@dataclass
class RiskConstraint:
    """Chance-constraint relaxation prepared once for a parameter box.

    Covers depend only on the world-frame tube, so they are built once.
    With ``enclosure="box"`` the Hessian enclosures are taken over the box
    hull of ``S + A_j P`` for ``P = [p_lo, p_hi]`` and reused for every
    evaluation in ``P``.  With ``enclosure="point"`` they are recomputed
    over ``S + A_j p`` at each evaluation, which bounds the risk at that
    ``p`` only; the reported gradient then holds the enclosure fixed.

    ``regions`` is a list of per-interval tuples ``(center, A_j, G_j)`` in
    world coordinates, 1-based interval ``j`` at list index ``j - 1``.
    Pairs whose swept region carries less than ``prune_tol`` mass are
    replaced by that mass bound (with zero gradient).  Likewise single
    triangles whose density ceiling times area is below ``tri_tol``
    contribute that product instead of the closed form.
    """

    regions: list
    field: ObstacleField
    p_lo: np.ndarray
    p_hi: np.ndarray
    grid_k: int = 24
    prune_tol: float = 1e-10
    tri_tol: float = 1e-13
    workers: int = 1
    hess_split: int = 4
    enclosure: str = "box"
    blocks: list = field(default_factory=list, init=False)

    def __post_init__(self):
        t0 = time.perf_counter()
        if self.enclosure not in ENCLOSURES:
            raise ValueError(f"enclosure must be one of {ENCLOSURES}")
        self.p_lo = np.asarray(self.p_lo, dtype=float)
        self.p_hi = np.asarray(self.p_hi, dtype=float)
        if len(self.regions) != self.field.n_intervals:
            raise ValueError("tube and obstacle field disagree on the interval count")
        covers = {}
        gobs = self.field.gobs
        for key in self.field.pairs():
            _, j = key
            c, a_j, g_j = self.regions[j - 1]
            a_j = np.asarray(a_j, dtype=float)
            z = Zonotope2(c, np.concatenate([np.asarray(g_j, float), gobs], axis=1))
            m = self.field.pdfs[key]
            olo, ohi = param_box_offsets(a_j, self.p_lo, self.p_hi)
            zlo, zhi = z.bbox()
            bound = float(m.mass_upper_bound(zlo + olo, zhi + ohi))
            if bound < self.prune_tol:
                self.blocks.append(_PairBlock(key, m, a_j, None, bound=bound))
                continue
            if j not in covers:
                covers[j] = build_cover(z, self.grid_k)
            cov = covers[j]
            lo, hi = triangle_boxes(cov.anchors, cov.orient, cov.legs)
            blk = _PairBlock(key, m, a_j, cov, zlo, zhi, lo, hi)
            if self.enclosure == "box":
                blk.live, blk.dead_mass = self._split_live(m, lo + olo, hi + ohi, cov.legs)
                blk.h_lo, blk.h_up = hessian_enclosure(m, (lo + olo)[blk.live], (hi + ohi)[blk.live],
                                                       self.hess_split)
            self.blocks.append(blk)
        self.build_time = time.perf_counter() - t0

    @property
    def triangle_count(self) -> int:
        return sum(len(b.cover) for b in self.blocks if b.cover is not None)

    def _split_live(self, m, lo, hi, legs):
        """Mask of triangles worth a closed-form evaluation, and the rest's mass bound."""
        ceiling = m.value_bounds(lo, hi)[1] * (0.5 * legs[0] * legs[1])
        live = ceiling >= self.tri_tol
        return live, math.fsum(ceiling[~live])

    def _eval_block(self, b: _PairBlock, p, lower: bool):
        n_p = len(p)
        if b.cover is None:
            return b.bound, np.zeros(n_p), 0, b.bound
        c = b.cover
        if self.enclosure == "point":
            shift = b.a_j @ p
            bound = float(b.model.mass_upper_bound(b.zlo + shift, b.zhi + shift))
            if bound < self.prune_tol:
                return bound, np.zeros(n_p), 0, bound
            if type(b.model) is Gaussian:
                return self._eval_gauss_point(b, p, shift, lower)
            lo, hi = b.tri_lo + shift, b.tri_hi + shift
            live, dead = self._split_live(b.model, lo, hi, c.legs)
            h_lo, h_up = hessian_enclosure(b.model, lo[live], hi[live], self.hess_split)
        else:
            live, dead, h_lo, h_up = b.live, b.dead_mass, b.h_lo, b.h_up
        anchors, orient = c.anchors[live], c.orient[live]
        vals, gw = _closed_form(anchors, orient, c.legs, h_up, b.model, b.a_j, p, grad=True)
        low = None
        if lower:
            low = math.fsum(_closed_form(anchors, orient, c.legs, h_lo, b.model, b.a_j, p)[0])
        total = math.fsum(vals) + dead
        return total, gw.sum(axis=0) @ b.a_j, int(np.sum(vals < 0)), low

    def _eval_gauss_point(self, b: _PairBlock, p, shift, lower: bool):
        c, m = b.cover, b.model
        v, lo, dead, gx, gy, neg = _gauss_point_block(
            np.ascontiguousarray(c.anchors, dtype=float), np.asarray(c.orient, dtype=float), float(c.legs[0]), float(c.legs[1]), shift, m.mu, m._prec, m._norm,
            self.hess_split, self.tri_tol, _PAD, iv.REL, iv.ABS, lower)
        return v + dead, np.array([gx, gy]) @ b.a_j, neg, (lo if lower else None)

    def evaluate(self, p, lower: bool = False) -> RiskReport:
        t0 = time.perf_counter()
        p = np.asarray(p, dtype=float)
        if np.any(p < self.p_lo - 1e-9) or np.any(p > self.p_hi + 1e-9):
            raise ValueError("parameter outside the box the relaxation was built for")
        if self.workers > 1 and len(self.blocks) > 1:
            with ThreadPoolExecutor(self.workers) as ex:
                results = list(ex.map(lambda b: self._eval_block(b, p, lower), self.blocks))
        else:
            results = [self._eval_block(b, p, lower) for b in self.blocks]
        per_pair = {b.key: r[0] for b, r in zip(self.blocks, results)}
        # exactly rounded sums are independent of evaluation order
        total = max(math.fsum(r[0] for r in results), 0.0)
        grad = np.array([math.fsum(r[1][k] for r in results) for k in range(len(p))])
        low = max(math.fsum(r[3] for r in results), 0.0) if lower else None
        return RiskReport(total, per_pair, grad, self.triangle_count, time.perf_counter() - t0,
                          sum(r[2] for r in results), sum(b.cover is None for b in self.blocks), low)


def regions_from_tube(tube, z0) -> list:
    from .reachability import tube_to_world
    return [(z.center, a, z.generators) for z, a in tube_to_world(tube, z0)]


def risk_and_grad(tube, field: ObstacleField, z0, p, k: int = 24, p_box=None,
                  workers: int = 1, lower: bool = False, hess_split: int = 4,
                  enclosure: str = "box") -> RiskReport:
    """Risk over-approximation of ``tube`` from ``z0`` at ``p`` and its gradient.

    ``p_box`` narrows the parameter box used for the Hessian enclosures;
    by default the tube's full box is used.
    """
    p_lo, p_hi = (tube.p_lo, tube.p_hi) if p_box is None else p_box
    if field.n_intervals != tube.n_intervals:
        raise ValueError("tube and obstacle field disagree on the interval count")
    rc = RiskConstraint(regions_from_tube(tube, z0), field, p_lo, p_hi, k, workers=workers,
                        hess_split=hess_split, enclosure=enclosure)
    rep = rc.evaluate(p, lower=lower)
    rep.wall_time += rc.build_time
    return rep
