import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from chanceplan import intervals as iv
from chanceplan.uncertainty import _q_range

finite = st.floats(-1e3, 1e3, allow_nan=False)


def interval(a, b):
    return np.array(min(a, b)), np.array(max(a, b))


def points(x, t):
    return x[0] + t * (x[1] - x[0])


@given(finite, finite, finite, finite, st.floats(0, 1), st.floats(0, 1))
def test_operations_enclose_pointwise_results(a, b, c, d, s, t):
    x, y = interval(a, b), interval(c, d)
    px, py = points(x, s), points(y, t)
    for (lo, hi), v in ((iv.add(x, y), px + py), (iv.mul(x, y), px * py), (iv.sqr(x), px * px),
                        (iv.scale(-2.5, x), -2.5 * px), (iv.shift(x, 3.0), px + 3.0)):
        lo, hi = iv.widen(lo, hi)
        assert lo <= v <= hi


def test_square_of_straddling_interval_starts_at_zero():
    lo, hi = iv.sqr((np.array(-1.0), np.array(2.0)))
    assert lo == 0.0 and hi == 4.0


@given(st.floats(-3, 3), st.floats(0.01, 3), st.floats(-3, 3), st.floats(0.01, 3),
       st.floats(0.1, 2), st.floats(-0.9, 0.9), st.floats(0.1, 2))
def test_quadratic_form_range(x0, wx, y0, wy, p00, c, p11):
    # positive definite precision matrix with correlation c
    p01 = c * np.sqrt(p00 * p11)
    qmin, qmax = _q_range(x0, x0 + wx, y0, y0 + wy, p00, p01, p11)
    g = np.linspace(0, 1, 41)
    xs, ys = np.meshgrid(x0 + wx * g, y0 + wy * g)
    q = p00 * xs ** 2 + 2 * p01 * xs * ys + p11 * ys ** 2
    tol = 1e-9 * (1 + q.max())
    assert qmin <= q.min() + tol and q.max() <= qmax + tol
    # the range is exact: grid extremes get close to it
    assert q.min() - qmin <= 0.02 * (1 + q.max()) and qmax - q.max() <= 1e-9 * (1 + qmax)
