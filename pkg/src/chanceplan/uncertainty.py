"""Obstacle location densities with analytic derivatives and interval Hessians.

All models evaluate on arrays of points with shape (..., 2).  Box arguments
are pairs ``lo, hi`` of shape (..., 2).  Interval routines return
element-wise lower and upper bounds that hold for every point of the box.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import polynomial as npoly
from numba import njit
from scipy.special import betaln, ndtr

from . import intervals as iv

_PAD = 1e-12  # relative outward rounding of interval results


@dataclass(frozen=True)
class Interval2x2:
    lower: np.ndarray
    upper: np.ndarray

    def contains(self, h, tol: float = 0.0) -> bool:
        return bool(np.all(h >= self.lower - tol) and np.all(h <= self.upper + tol))


class PdfModel:
    """Interface shared by all densities."""

    kind = "abstract"

    def value(self, w):
        raise NotImplementedError

    def grad(self, w):
        raise NotImplementedError

    def hessian(self, w):
        raise NotImplementedError

    def hessian_bounds(self, lo, hi):
        """Element-wise Hessian bounds (..., 2, 2) over boxes."""
        raise NotImplementedError

    def value_bounds(self, lo, hi):
        raise NotImplementedError

    def hessian_enclosure(self, lo, hi, split: int = 1):
        """Hessian bounds over boxes (n, 2), each cut into ``split x split`` pieces.

        The extremes over the pieces still enclose the Hessian on the whole
        box and are usually much tighter than a single evaluation.
        """
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if split < 1:
            raise ValueError("split must be at least 1")
        if split == 1:
            return self.hessian_bounds(lo, hi)
        step = (hi - lo) / split
        k = np.arange(split, dtype=float)
        k0 = np.stack(np.meshgrid(k, k, indexing="ij"), axis=-1).reshape(-1, 1, 2)
        s_lo = lo[None] + step[None] * k0
        # the last piece ends exactly at hi so no sliver is lost to rounding
        s_hi = np.where(k0 + 1 == split, hi[None], lo[None] + step[None] * (k0 + 1))
        l, u = self.hessian_bounds(s_lo, s_hi)
        return l.min(axis=0), u.max(axis=0)

    def mass_upper_bound(self, lo, hi):
        """Upper bound on the probability of an axis-aligned box."""
        area = np.prod(np.asarray(hi) - np.asarray(lo), axis=-1)
        return self.value_bounds(lo, hi)[1] * area

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def mean(self) -> np.ndarray:
        raise NotImplementedError

    def cov(self) -> np.ndarray:
        raise NotImplementedError

    def hessian_interval(self, lo, hi) -> Interval2x2:
        l, u = self.hessian_bounds(np.asarray(lo, float), np.asarray(hi, float))
        return Interval2x2(l, u)


def _sym(h11, h12, h22):
    return np.stack([np.stack([h11, h12], -1), np.stack([h12, h22], -1)], -2)


@njit(cache=True)
def _imul(a0, a1, b0, b1):
    p1, p2, p3, p4 = a0 * b0, a0 * b1, a1 * b0, a1 * b1
    return min(min(p1, p2), min(p3, p4)), max(max(p1, p2), max(p3, p4))


@njit(cache=True)
def _iscale(c, a0, a1):
    x, y = c * a0, c * a1
    return min(x, y), max(x, y)


@njit(cache=True)
def _isqr(a0, a1):
    x, y = a0 * a0, a1 * a1
    if a0 <= 0.0 <= a1:
        return 0.0, max(x, y)
    return min(x, y), max(x, y)


@njit(cache=True)
def _q_range(x0, x1, y0, y1, p00, p01, p11):
    """Exact range of the quadratic form ``d^T P d`` over a box of offsets ``d``."""
    qmax = -np.inf
    for xa in (x0, x1):
        for yb in (y0, y1):
            qmax = max(qmax, p00 * xa * xa + 2 * p01 * xa * yb + p11 * yb * yb)
    if x0 <= 0.0 <= x1 and y0 <= 0.0 <= y1:
        return 0.0, qmax
    qmin = np.inf
    # the form is convex along each edge
    for xa in (x0, x1):
        yb = min(max(-p01 * xa / p11, y0), y1)
        qmin = min(qmin, p00 * xa * xa + 2 * p01 * xa * yb + p11 * yb * yb)
    for yb in (y0, y1):
        xa = min(max(-p01 * yb / p00, x0), x1)
        qmin = min(qmin, p00 * xa * xa + 2 * p01 * xa * yb + p11 * yb * yb)
    return qmin, qmax


@njit(cache=True)
def _gauss_split_bounds(lo, hi, mu, prec, norm, split, pad, rel, absr, out_lo, out_hi):
    """Same interval evaluation as ``Gaussian.hessian_bounds`` over sub-boxes."""
    p00, p01, p11 = prec[0, 0], prec[0, 1], prec[1, 1]
    for n in range(lo.shape[0]):
        s0 = (hi[n, 0] - lo[n, 0]) / split
        s1 = (hi[n, 1] - lo[n, 1]) / split
        best_lo = np.full(3, np.inf)
        best_hi = np.full(3, -np.inf)
        for a in range(split):
            x0 = lo[n, 0] + s0 * a - mu[0]
            x1 = (hi[n, 0] if a + 1 == split else lo[n, 0] + s0 * (a + 1)) - mu[0]
            for b in range(split):
                y0 = lo[n, 1] + s1 * b - mu[1]
                y1 = (hi[n, 1] if b + 1 == split else lo[n, 1] + s1 * (b + 1)) - mu[1]
                qmin, qmax = _q_range(x0, x1, y0, y1, p00, p01, p11)
                qmin *= 1 - pad
                qmax *= 1 + pad
                f0 = norm * np.exp(-0.5 * qmax) * (1 - pad)
                f1 = norm * np.exp(-0.5 * qmin) * (1 + pad)
                ga0, ga1 = _iscale(p00, x0, x1)
                gb0, gb1 = _iscale(p01, y0, y1)
                g10, g11 = ga0 + gb0, ga1 + gb1
                ga0, ga1 = _iscale(p01, x0, x1)
                gb0, gb1 = _iscale(p11, y0, y1)
                g20, g21 = ga0 + gb0, ga1 + gb1
                q0, q1 = _isqr(g10, g11)
                h = _imul(f0, f1, q0 - p00, q1 - p00)
                best_lo[0] = min(best_lo[0], h[0])
                best_hi[0] = max(best_hi[0], h[1])
                q0, q1 = _imul(g10, g11, g20, g21)
                h = _imul(f0, f1, q0 - p01, q1 - p01)
                best_lo[1] = min(best_lo[1], h[0])
                best_hi[1] = max(best_hi[1], h[1])
                q0, q1 = _isqr(g20, g21)
                h = _imul(f0, f1, q0 - p11, q1 - p11)
                best_lo[2] = min(best_lo[2], h[0])
                best_hi[2] = max(best_hi[2], h[1])
        for e, (r, c) in enumerate(((0, 0), (0, 1), (1, 1))):
            l = best_lo[e] - abs(best_lo[e]) * rel - absr
            u = best_hi[e] + abs(best_hi[e]) * rel + absr
            out_lo[n, r, c] = l
            out_lo[n, c, r] = l
            out_hi[n, r, c] = u
            out_hi[n, c, r] = u


@dataclass(frozen=True)
class Gaussian(PdfModel):
    mu: np.ndarray
    sigma: np.ndarray
    kind: str = field(default="gaussian", init=False)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(2)
        s = np.asarray(self.sigma, dtype=float).reshape(2, 2)
        s = 0.5 * (s + s.T)
        if np.linalg.eigvalsh(s)[0] <= 0:
            raise ValueError("covariance must be positive definite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", s)
        p = np.linalg.inv(s)
        object.__setattr__(self, "_prec", 0.5 * (p + p.T))
        object.__setattr__(self, "_norm", 1.0 / (2 * np.pi * math.sqrt(np.linalg.det(s))))

    def _parts(self, w):
        d = np.asarray(w, dtype=float) - self.mu
        g = d @ self._prec
        q = np.einsum("...i,...i->...", d, g)
        return g, self._norm * np.exp(-0.5 * q)

    def value(self, w):
        return self._parts(w)[1]

    def grad(self, w):
        g, f = self._parts(w)
        return -f[..., None] * g

    def hessian(self, w):
        g, f = self._parts(w)
        outer = g[..., :, None] * g[..., None, :]
        return f[..., None, None] * (outer - self._prec)

    def _quad_range(self, lo, hi):
        """Exact range of (w - mu)^T P (w - mu) over the box."""
        p = self._prec
        dl = np.asarray(lo, float) - self.mu
        dh = np.asarray(hi, float) - self.mu

        def q(a, b):
            return p[0, 0] * a * a + 2 * p[0, 1] * a * b + p[1, 1] * b * b

        corners = [q(dl[..., 0], dl[..., 1]), q(dl[..., 0], dh[..., 1]),
                   q(dh[..., 0], dl[..., 1]), q(dh[..., 0], dh[..., 1])]
        qmax = np.maximum.reduce(corners)
        # minimum on each edge of the box (convex in the free coordinate)
        cands = []
        for a in (dl[..., 0], dh[..., 0]):
            b = np.clip(-p[0, 1] * a / p[1, 1], dl[..., 1], dh[..., 1])
            cands.append(q(a, b))
        for b in (dl[..., 1], dh[..., 1]):
            a = np.clip(-p[0, 1] * b / p[0, 0], dl[..., 0], dh[..., 0])
            cands.append(q(a, b))
        qmin = np.minimum.reduce(cands)
        inside = (dl[..., 0] <= 0) & (dh[..., 0] >= 0) & (dl[..., 1] <= 0) & (dh[..., 1] >= 0)
        qmin = np.where(inside, 0.0, qmin)
        return qmin * (1 - _PAD), qmax * (1 + _PAD)

    def value_bounds(self, lo, hi):
        qmin, qmax = self._quad_range(lo, hi)
        return self._norm * np.exp(-0.5 * qmax) * (1 - _PAD), self._norm * np.exp(-0.5 * qmin) * (1 + _PAD)

    def hessian_bounds(self, lo, hi):
        p = self._prec
        dl = np.asarray(lo, float) - self.mu
        dh = np.asarray(hi, float) - self.mu
        f = self.value_bounds(lo, hi)
        g1 = iv.add(iv.scale(p[0, 0], (dl[..., 0], dh[..., 0])), iv.scale(p[0, 1], (dl[..., 1], dh[..., 1])))
        g2 = iv.add(iv.scale(p[1, 0], (dl[..., 0], dh[..., 0])), iv.scale(p[1, 1], (dl[..., 1], dh[..., 1])))
        h11 = iv.mul(f, iv.shift(iv.sqr(g1), -p[0, 0]))
        h22 = iv.mul(f, iv.shift(iv.sqr(g2), -p[1, 1]))
        h12 = iv.mul(f, iv.shift(iv.mul(g1, g2), -p[0, 1]))
        lo_m = _sym(h11[0], h12[0], h22[0])
        hi_m = _sym(h11[1], h12[1], h22[1])
        return iv.widen(lo_m, hi_m)

    def hessian_enclosure(self, lo, hi, split: int = 1):
        lo = np.ascontiguousarray(lo, dtype=float).reshape(-1, 2)
        hi = np.ascontiguousarray(hi, dtype=float).reshape(-1, 2)
        if split < 1:
            raise ValueError("split must be at least 1")
        out_lo = np.empty((len(lo), 2, 2))
        out_hi = np.empty((len(lo), 2, 2))
        _gauss_split_bounds(lo, hi, self.mu, self._prec, self._norm, int(split), _PAD,
                            iv.REL, iv.ABS, out_lo, out_hi)
        return out_lo, out_hi

    def mass_upper_bound(self, lo, hi):
        """Box probability bounded by the product of marginal interval masses."""
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        sd = np.sqrt(np.diag(self.sigma))
        zl, zh = (lo - self.mu) / sd, (hi - self.mu) / sd
        # use the upper-tail form above the mean to avoid cancellation
        m = np.where(zl > 0, ndtr(-zl) - ndtr(-zh), ndtr(zh) - ndtr(zl))
        m = np.maximum(m, 0.0) * (1 + 1e-9) + 1e-15
        return np.minimum(m[..., 0], m[..., 1])

    def sample(self, rng, n):
        return rng.multivariate_normal(self.mu, self.sigma, size=n, method="cholesky")

    def mean(self):
        return self.mu.copy()

    def cov(self):
        return self.sigma.copy()


@dataclass(frozen=True)
class GaussianMixture(PdfModel):
    weights: np.ndarray
    components: tuple
    kind: str = field(default="gaussian_mixture", init=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(w) != len(self.components) or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("mixture weights must be nonnegative and match components")
        object.__setattr__(self, "weights", w / w.sum())
        object.__setattr__(self, "components", tuple(self.components))

    def _wsum(self, fn):
        return sum(w * fn(c) for w, c in zip(self.weights, self.components))

    def value(self, w):
        return self._wsum(lambda c: c.value(w))

    def grad(self, w):
        return self._wsum(lambda c: c.grad(w))

    def hessian(self, w):
        return self._wsum(lambda c: c.hessian(w))

    def hessian_bounds(self, lo, hi):
        lo_acc = hi_acc = 0.0
        for wt, c in zip(self.weights, self.components):
            l, u = c.hessian_bounds(lo, hi)
            lo_acc = lo_acc + wt * l
            hi_acc = hi_acc + wt * u
        return iv.widen(lo_acc, hi_acc)

    def value_bounds(self, lo, hi):
        lo_acc = hi_acc = 0.0
        for wt, c in zip(self.weights, self.components):
            l, u = c.value_bounds(lo, hi)
            lo_acc = lo_acc + wt * l
            hi_acc = hi_acc + wt * u
        return lo_acc * (1 - _PAD), hi_acc * (1 + _PAD)

    def mass_upper_bound(self, lo, hi):
        return self._wsum(lambda c: c.mass_upper_bound(lo, hi)) * (1 + 1e-9)

    def sample(self, rng, n):
        idx = rng.choice(len(self.components), size=n, p=self.weights)
        out = np.empty((n, 2))
        for k, c in enumerate(self.components):
            sel = idx == k
            if np.any(sel):
                out[sel] = c.sample(rng, int(sel.sum()))
        return out

    def mean(self):
        return self._wsum(lambda c: c.mean())

    def cov(self):
        m = self.mean()
        second = self._wsum(lambda c: c.cov() + np.outer(c.mean(), c.mean()))
        return second - np.outer(m, m)


class _BetaFactor:
    """One-dimensional factors of the bivariate beta density on [0, 1].

    ``b(x) = x^(a-1) (1-x)^(b-1) / B(a, b)`` and ``s(x) = b(x) (x - m)``
    with ``m`` the beta mean, plus their first two derivatives.  Values are
    zero outside [0, 1].
    """

    def __init__(self, a: int, b: int):
        self.a, self.b = int(a), int(b)
        self.m = a / (a + b)
        base = npoly.polymul(npoly.polypow([0.0, 1.0], a - 1), npoly.polypow([1.0, -1.0], b - 1))
        base = base / math.exp(betaln(a, b))
        cent = npoly.polymul(base, [-self.m, 1.0])
        self.polys = {}
        for name, c in (("b", base), ("s", cent)):
            for order in range(3):
                self.polys[(name, order)] = npoly.polyder(c, order) if order else c
        # stationary points inside (0, 1) for exact ranges
        self.crit = {}
        for key, c in self.polys.items():
            r = npoly.polyroots(npoly.polyder(c)) if len(c) > 1 else np.array([])
            r = np.real(r[np.abs(np.imag(r)) < 1e-9])
            self.crit[key] = np.sort(r[(r > 0) & (r < 1)])

    def eval(self, key, x):
        x = np.asarray(x, dtype=float)
        v = npoly.polyval(x, self.polys[key])
        return np.where((x >= 0) & (x <= 1), v, 0.0)

    def bounds(self, key, lo, hi):
        """Exact range (up to rounding) over [lo, hi] of the zero-extended factor."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        c = self.polys[key]
        a = np.clip(lo, 0.0, 1.0)
        b = np.clip(hi, 0.0, 1.0)
        va, vb = npoly.polyval(a, c), npoly.polyval(b, c)
        vmin, vmax = np.minimum(va, vb), np.maximum(va, vb)
        for r in self.crit[key]:
            vr = npoly.polyval(r, c)
            inside = (a <= r) & (r <= b)
            vmin = np.where(inside, np.minimum(vmin, vr), vmin)
            vmax = np.where(inside, np.maximum(vmax, vr), vmax)
        outside = (lo < 0) | (hi > 1)
        vmin = np.where(outside, np.minimum(vmin, 0.0), vmin)
        vmax = np.where(outside, np.maximum(vmax, 0.0), vmax)
        empty = (hi < 0) | (lo > 1)
        vmin = np.where(empty, 0.0, vmin)
        vmax = np.where(empty, 0.0, vmax)
        scale = np.maximum(np.abs(vmin), np.abs(vmax)) * 1e-12 + 1e-300
        return vmin - scale, vmax + scale

    def second_moment(self) -> float:
        a, b = self.a, self.b
        return a * b / ((a + b) ** 2 * (a + b + 1))


@dataclass(frozen=True)
class BivariateBeta(PdfModel):
    """Correlated product-beta density mapped onto a rectangle.

    In unit coordinates ``(x, y)`` the density is
    ``B1(x) B2(y) (1 + rho (x - m1)(y - m2))`` with beta marginals of integer
    shapes ``(a, b)`` and ``(c, d)``.  Marginals stay exactly beta, the
    covariance is ``rho * var1 * var2``.  The support map is
    ``w = origin + scale * (x, y)``.
    """

    shape: tuple = (4, 4, 4, 4)
    rho: float = 0.0
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))
    scale: np.ndarray = field(default_factory=lambda: np.ones(2))
    kind: str = field(default="bivariate_beta", init=False)

    def __post_init__(self):
        a, b, c, d = (int(s) for s in self.shape)
        if min(a, b, c, d) < 3:
            raise ValueError("beta shape parameters must be at least 3")
        object.__setattr__(self, "shape", (a, b, c, d))
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(2))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=float).reshape(2))
        if np.any(self.scale <= 0):
            raise ValueError("support scale must be positive")
        fx, fy = _BetaFactor(a, b), _BetaFactor(c, d)
        mx = max(fx.m, 1 - fx.m) * max(fy.m, 1 - fy.m)
        if abs(self.rho) * mx >= 1:
            raise ValueError("|rho| too large: density would turn negative")
        object.__setattr__(self, "_fx", fx)
        object.__setattr__(self, "_fy", fy)
        object.__setattr__(self, "_accept_bound", 1 + abs(self.rho) * mx)

    def _unit(self, w):
        u = (np.asarray(w, dtype=float) - self.origin) / self.scale
        return u[..., 0], u[..., 1]

    def _combo(self, ox, oy, x, y):
        fx, fy = self._fx, self._fy
        return (fx.eval(("b", ox), x) * fy.eval(("b", oy), y)
                + self.rho * fx.eval(("s", ox), x) * fy.eval(("s", oy), y))

    def value(self, w):
        x, y = self._unit(w)
        return self._combo(0, 0, x, y) / (self.scale[0] * self.scale[1])

    def grad(self, w):
        x, y = self._unit(w)
        j = self.scale[0] * self.scale[1]
        return np.stack([self._combo(1, 0, x, y) / self.scale[0],
                         self._combo(0, 1, x, y) / self.scale[1]], -1) / j

    def hessian(self, w):
        x, y = self._unit(w)
        sx, sy = self.scale
        j = sx * sy
        return _sym(self._combo(2, 0, x, y) / (sx * sx * j),
                    self._combo(1, 1, x, y) / (sx * sy * j),
                    self._combo(0, 2, x, y) / (sy * sy * j))

    def _combo_bounds(self, ox, oy, lo, hi):
        fx, fy = self._fx, self._fy
        ulo = (np.asarray(lo, float) - self.origin) / self.scale
        uhi = (np.asarray(hi, float) - self.origin) / self.scale
        xl, xh, yl, yh = ulo[..., 0], uhi[..., 0], ulo[..., 1], uhi[..., 1]
        t1 = iv.mul(fx.bounds(("b", ox), xl, xh), fy.bounds(("b", oy), yl, yh))
        t2 = iv.scale(self.rho, iv.mul(fx.bounds(("s", ox), xl, xh), fy.bounds(("s", oy), yl, yh)))
        return iv.add(t1, t2)

    def value_bounds(self, lo, hi):
        l, u = self._combo_bounds(0, 0, lo, hi)
        j = self.scale[0] * self.scale[1]
        return np.maximum(l, 0.0) / j * (1 - _PAD), u / j * (1 + _PAD)

    def hessian_bounds(self, lo, hi):
        sx, sy = self.scale
        j = sx * sy
        h11 = iv.scale(1 / (sx * sx * j), self._combo_bounds(2, 0, lo, hi))
        h12 = iv.scale(1 / (sx * sy * j), self._combo_bounds(1, 1, lo, hi))
        h22 = iv.scale(1 / (sy * sy * j), self._combo_bounds(0, 2, lo, hi))
        return iv.widen(_sym(h11[0], h12[0], h22[0]), _sym(h11[1], h12[1], h22[1]))

    def mass_upper_bound(self, lo, hi):
        lo = np.maximum(np.asarray(lo, float), self.origin)
        hi = np.minimum(np.asarray(hi, float), self.origin + self.scale)
        area = np.prod(np.maximum(hi - lo, 0.0), axis=-1)
        sup = self.value_bounds(lo, np.maximum(hi, lo))[1]
        return np.where(area > 0, sup * area * (1 + 1e-9), 0.0)

    def sample(self, rng, n):
        a, b, c, d = self.shape
        out = np.empty((0, 2))
        while len(out) < n:
            m = max(2 * (n - len(out)), 64)
            x = rng.beta(a, b, size=m)
            y = rng.beta(c, d, size=m)
            acc = (1 + self.rho * (x - self._fx.m) * (y - self._fy.m)) / self._accept_bound
            keep = rng.uniform(size=m) < acc
            out = np.vstack([out, np.stack([x[keep], y[keep]], -1)])
        return self.origin + out[:n] * self.scale

    def mean(self):
        return self.origin + self.scale * np.array([self._fx.m, self._fy.m])

    def cov(self):
        vx, vy = self._fx.second_moment(), self._fy.second_moment()
        sx, sy = self.scale
        cxy = self.rho * vx * vy * sx * sy
        return np.array([[vx * sx * sx, cxy], [cxy, vy * sy * sy]])


@dataclass
class ObstacleField:
    """Per (obstacle, interval) densities sharing one obstacle footprint ``gobs``.

    Intervals are 1-based to match a tube's j index.
    """

    pdfs: dict
    gobs: np.ndarray
    n_intervals: int

    def __post_init__(self):
        self.gobs = np.asarray(self.gobs, dtype=float).reshape(2, -1)
        for (_, j) in self.pdfs:
            if not 1 <= j <= self.n_intervals:
                raise ValueError(f"interval index {j} outside 1..{self.n_intervals}")

    @property
    def obstacles(self) -> list:
        return sorted({i for i, _ in self.pdfs})

    def pairs(self) -> list:
        return sorted(self.pdfs)

    def restricted(self, n_intervals: int) -> "ObstacleField":
        """Same field truncated to the first ``n_intervals`` intervals."""
        pdfs = {k: v for k, v in self.pdfs.items() if k[1] <= n_intervals}
        return ObstacleField(pdfs, self.gobs, n_intervals)


# ---------------------------------------------------------------- pdf sampling

def pdf_value(m: PdfModel, w):
    return m.value(w)


def pdf_grad(m: PdfModel, w):
    return m.grad(w)


def pdf_hessian(m: PdfModel, w):
    return m.hessian(w)


def hessian_interval(m: PdfModel, lo, hi) -> Interval2x2:
    return m.hessian_interval(lo, hi)


# ---------------------------------------------------------------- config IO

def model_from_dict(d: dict) -> PdfModel:
    kind = d["kind"]
    if kind == "gaussian":
        return Gaussian(d["mean"], d["cov"])
    if kind == "gaussian_mixture":
        comps = [model_from_dict({"kind": "gaussian", **c}) for c in d["components"]]
        w = d.get("weights", [1.0] * len(comps))
        return GaussianMixture(w, tuple(comps))
    if kind == "bivariate_beta":
        return BivariateBeta(tuple(d.get("shape", (4, 4, 4, 4))), float(d.get("rho", 0.0)),
                             d.get("origin", [0.0, 0.0]), d.get("scale", [1.0, 1.0]))
    raise ValueError(f"unknown model kind {kind!r}")


def model_to_dict(m: PdfModel) -> dict:
    if isinstance(m, Gaussian):
        return {"kind": "gaussian", "mean": m.mu.tolist(), "cov": m.sigma.tolist()}
    if isinstance(m, GaussianMixture):
        return {"kind": "gaussian_mixture", "weights": m.weights.tolist(),
                "components": [{"mean": c.mu.tolist(), "cov": c.sigma.tolist()} for c in m.components]}
    if isinstance(m, BivariateBeta):
        return {"kind": "bivariate_beta", "shape": list(m.shape), "rho": m.rho,
                "origin": m.origin.tolist(), "scale": m.scale.tolist()}
    raise TypeError(type(m))


def load_text(path) -> dict:
    """Read a JSON or YAML file into a dict."""
    text = Path(path).read_text()
    if str(path).endswith((".yaml", ".yml")):
        import yaml
        return yaml.safe_load(text)
    return json.loads(text)


def load_models(path) -> list:
    """Load a list of models from a config file with a ``models`` list."""
    data = load_text(path)
    items = data["models"] if isinstance(data, dict) else data
    return [model_from_dict(d) for d in items]
