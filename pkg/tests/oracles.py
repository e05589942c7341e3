"""Independent reference computations shared by the tests."""

import numpy as np
from scipy import integrate


def quadratic_bound_integral(t, m, h_s, shift):
    """Adaptive quadrature of the explicit quadratic upper bound over ``t + shift``.

    The integrand is ``f(a) + grad f(a).(w - a) + 1/2 (w - a)^T H (w - a)``
    with ``a`` the shifted anchor.
    """
    a = t.anchor + shift
    f = float(m.value(a))
    g = np.asarray(m.grad(a), float)
    l1, l2 = t.legs
    o = t.orient

    def integrand(y, x):
        d = o * np.array([x, y])
        return f + g @ d + 0.5 * d @ h_s @ d

    val, _ = integrate.dblquad(integrand, 0.0, l1, 0.0, lambda x: l2 * (1.0 - x / l1),
                               epsabs=0.0, epsrel=1e-13)
    return val


def sampled_mass(region, m, n, seed):
    """Plain Monte Carlo mass of ``m`` in ``region`` with its standard error."""
    pts = m.sample(np.random.default_rng(seed), n)
    v = float(region.contains(pts).mean())
    return v, float(np.sqrt(v * (1 - v) / n))
