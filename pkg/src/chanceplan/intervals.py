"""Minimal vectorised interval arithmetic on (lo, hi) array pairs."""

import numpy as np

REL = 1e-12
ABS = 1e-300


def widen(lo, hi):
    """Round outward by a relative margin."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    return lo - np.abs(lo) * REL - ABS, hi + np.abs(hi) * REL + ABS


def add(x, y):
    return x[0] + y[0], x[1] + y[1]


def shift(x, c):
    return x[0] + c, x[1] + c


def scale(c, x):
    a, b = c * x[0], c * x[1]
    return np.minimum(a, b), np.maximum(a, b)


def mul(x, y):
    p = (x[0] * y[0], x[0] * y[1], x[1] * y[0], x[1] * y[1])
    return np.minimum.reduce(p), np.maximum.reduce(p)


def sqr(x):
    lo, hi = x
    a, b = lo * lo, hi * hi
    straddle = (lo <= 0) & (hi >= 0)
    return np.where(straddle, 0.0, np.minimum(a, b)), np.maximum(a, b)
