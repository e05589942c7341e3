"""Reference risk estimators: Monte Carlo, Cantelli bound and 5-sigma box."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .uncertainty import Gaussian, PdfModel
from .zonotope import Zonotope2

SHARD = 100_000


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float
    samples: int


def mc_risk(region: Zonotope2, m: PdfModel, n: int, seed: int = 0, workers: int = 1) -> McEstimate:
    """Fraction of ``n`` samples of ``m`` falling in ``region``.

    Samples are drawn in fixed-size shards with seeds spawned from ``seed``,
    so the count does not depend on how shards are scheduled.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    sizes = [SHARD] * (n // SHARD) + ([n % SHARD] if n % SHARD else [])
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))

    def count(args):
        size, ss = args
        return int(region.contains(m.sample(np.random.default_rng(ss), size)).sum())

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as ex:
            hits = sum(ex.map(count, zip(sizes, seeds)))
    else:
        hits = sum(map(count, zip(sizes, seeds)))
    v = hits / n
    return McEstimate(v, float(np.sqrt(v * (1 - v) / n)), n)


def closest_point(z: Zonotope2, x) -> np.ndarray:
    """Euclidean projection of ``x`` onto the zonotope polygon."""
    x = np.asarray(x, dtype=float)
    if z.contains(x):
        return x.copy()
    v = z.vertices()
    if len(v) == 1:
        return v[0].copy()
    a = v
    b = np.roll(v, -1, axis=0) if len(v) > 2 else v[::-1]
    e = b - a
    t = np.clip(np.einsum("ij,ij->i", x - a, e) / np.maximum(np.einsum("ij,ij->i", e, e), 1e-300), 0, 1)
    pts = a + t[:, None] * e
    return pts[np.argmin(np.linalg.norm(pts - x, axis=1))]


def cantelli_risk(region: Zonotope2, mean, cov) -> float:
    """One-sided Chebyshev bound on ``P(w in region)`` from two moments.

    The region lies in the half space through its closest point to the mean
    facing away from the mean.  For distance ``d`` along unit normal ``a``,
    ``P <= var_a / (var_a + d^2)``.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if np.linalg.det(cov) <= 0:
        raise ValueError("covariance must be nonsingular")
    if region.contains(mean):
        return 1.0
    q = closest_point(region, mean)
    diff = mean - q
    d = float(np.linalg.norm(diff))
    if d == 0.0:
        return 1.0
    a = diff / d
    var = float(a @ cov @ a)
    return min(1.0, var / (var + d * d))


def five_sigma_box(m: PdfModel) -> Zonotope2:
    """Box along the principal axes of a Gaussian with half widths 5 sigma."""
    if not isinstance(m, Gaussian):
        raise TypeError("five_sigma_box needs a Gaussian model")
    lam, vec = np.linalg.eigh(m.sigma)
    return Zonotope2(m.mu, vec * (5.0 * np.sqrt(lam)))
