import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from chanceplan.uncertainty import (BivariateBeta, Gaussian, GaussianMixture, ObstacleField, hessian_interval,
                                    load_models, model_from_dict, model_to_dict, pdf_grad, pdf_hessian, pdf_value)


def random_gaussian(rng):
    r = np.array([[math.cos(a := rng.uniform(0, math.pi)), -math.sin(a)], [math.sin(a), math.cos(a)]])
    s = rng.uniform(0.5, 3.0, 2)
    return Gaussian(rng.uniform(-3, 3, 2), r @ np.diag(s ** 2) @ r.T)


def random_model(kind, rng):
    if kind == "gaussian":
        return random_gaussian(rng)
    if kind == "mixture":
        n = int(rng.integers(2, 4))
        return GaussianMixture(rng.dirichlet(np.ones(n)), tuple(random_gaussian(rng) for _ in range(n)))
    return BivariateBeta((4, 4, 4, 4), float(rng.uniform(-2, 2)), rng.uniform(-6, -2, 2), rng.uniform(6, 12, 2))


KINDS = ["gaussian", "mixture", "beta"]


def test_standard_gaussian_peak():
    g = Gaussian([0, 0], np.eye(2))
    assert pdf_value(g, [0, 0]) == pytest.approx(1 / (2 * math.pi), rel=1e-15)


def test_mixture_far_tail():
    m = GaussianMixture([0.5, 0.5], (Gaussian([0, 0], np.eye(2)), Gaussian([3, 0], 4 * np.eye(2))))
    assert m.value([40.0, 0.0]) < 1e-20


def test_gaussian_matches_log_density_derivative():
    # grad log f = -P (w - mu), so grad f / f must equal it
    rng = np.random.default_rng(0)
    for _ in range(20):
        g = random_gaussian(rng)
        w = rng.uniform(-3, 3, 2)
        assert np.allclose(g.grad(w) / g.value(w), -np.linalg.solve(g.sigma, w - g.mu), rtol=1e-10)


def test_gradient_vanishes_at_mean():
    g = random_gaussian(np.random.default_rng(1))
    assert np.allclose(pdf_grad(g, g.mu), 0.0, atol=1e-18)


@pytest.mark.parametrize("kind", KINDS)
def test_gradient_matches_central_differences(kind):
    rng = np.random.default_rng(2)
    h = 1e-5
    for _ in range(100):
        m = random_model(kind, rng)
        w = m.mean() + rng.normal(size=2) * np.sqrt(np.diag(m.cov()))
        fd = np.array([(m.value(w + e) - m.value(w - e)) / (2 * h) for e in h * np.eye(2)])
        g = pdf_grad(m, w)
        assert np.max(np.abs(g - fd)) <= 1e-6 * max(np.max(np.abs(fd)), 1e-8 * m.value(w) + 1e-300)


def test_mixture_gradient_is_weighted_sum():
    rng = np.random.default_rng(3)
    comps = (random_gaussian(rng), random_gaussian(rng))
    m = GaussianMixture([0.3, 0.7], comps)
    w = rng.normal(size=2)
    assert np.allclose(m.grad(w), 0.3 * comps[0].grad(w) + 0.7 * comps[1].grad(w), rtol=1e-14)


def test_standard_gaussian_hessian_at_mean():
    g = Gaussian([0, 0], np.eye(2))
    assert np.allclose(pdf_hessian(g, [0, 0]), -np.eye(2) / (2 * math.pi), rtol=1e-15)


@pytest.mark.parametrize("kind", KINDS)
def test_hessian_matches_central_differences(kind):
    rng = np.random.default_rng(4)
    h = 1e-5
    for _ in range(50):
        m = random_model(kind, rng)
        w = m.mean() + rng.normal(size=2) * np.sqrt(np.diag(m.cov()))
        fd = np.stack([(m.grad(w + e) - m.grad(w - e)) / (2 * h) for e in h * np.eye(2)])
        hs = pdf_hessian(m, w)
        assert np.max(np.abs(hs - fd)) <= 1e-4 * np.max(np.abs(fd))
        assert hs[0, 1] == hs[1, 0]


def test_point_box_enclosure_is_the_hessian():
    g = random_gaussian(np.random.default_rng(5))
    w = g.mu + 0.7
    iv = hessian_interval(g, w, w)
    hs = g.hessian(w)
    assert np.allclose(iv.lower, hs, rtol=1e-10, atol=1e-300)
    assert np.allclose(iv.upper, hs, rtol=1e-10, atol=1e-300)
    assert np.all(iv.lower <= iv.upper)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("split", [1, 4])
def test_sampled_hessians_inside_enclosure(kind, split):
    rng = np.random.default_rng(6)
    for _ in range(10):
        m = random_model(kind, rng)
        lo = m.mean() + rng.uniform(-3, 1, 2)
        hi = lo + rng.uniform(0.1, 2.0, 2)
        h_lo, h_up = m.hessian_enclosure(lo[None], hi[None], split)
        pts = lo + (hi - lo) * rng.uniform(size=(1000, 2))
        hs = m.hessian(pts)
        assert np.all(hs >= h_lo[0]) and np.all(hs <= h_up[0])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(KINDS))
def test_enclosure_nests(seed, kind):
    rng = np.random.default_rng(seed)
    m = random_model(kind, rng)
    lo = m.mean() + rng.uniform(-3, 2, 2)
    hi = lo + rng.uniform(0.01, 1.0, 2)
    grow = rng.uniform(0, 1.0, 4)
    a = hessian_interval(m, lo, hi)
    b = hessian_interval(m, lo - grow[:2], hi + grow[2:])
    assert np.all(b.lower <= a.lower) and np.all(b.upper >= a.upper)


@pytest.mark.parametrize("kind", KINDS)
def test_value_and_mass_bounds(kind):
    rng = np.random.default_rng(7)
    m = random_model(kind, rng)
    lo, hi = m.mean() - 1.0, m.mean() + 0.5
    vlo, vhi = m.value_bounds(lo[None], hi[None])
    pts = lo + (hi - lo) * rng.uniform(size=(2000, 2))
    v = m.value(pts)
    assert np.all(v >= vlo[0]) and np.all(v <= vhi[0])
    mass, _ = integrate.dblquad(lambda y, x: float(m.value([x, y])), lo[0], hi[0], lo[1], hi[1])
    assert m.mass_upper_bound(lo, hi) >= mass


def test_beta_integrates_to_one_with_exact_moments():
    m = BivariateBeta((4, 5, 3, 6), 1.5, [1.0, -2.0], [8.0, 5.0])
    tot, _ = integrate.dblquad(lambda y, x: float(m.value([x, y])), 1, 9, -2, 3)
    assert tot == pytest.approx(1.0, abs=1e-8)
    ex, _ = integrate.dblquad(lambda y, x: x * float(m.value([x, y])), 1, 9, -2, 3)
    assert ex == pytest.approx(m.mean()[0], rel=1e-8)
    s = m.sample(np.random.default_rng(8), 200_000)
    assert np.allclose(np.cov(s.T), m.cov(), atol=0.05)


def test_beta_rejects_negative_density():
    with pytest.raises(ValueError):
        BivariateBeta((4, 4, 4, 4), 10.0)
    with pytest.raises(ValueError):
        BivariateBeta((2, 4, 4, 4))


def test_gaussian_rejects_singular_covariance():
    with pytest.raises(ValueError):
        Gaussian([0, 0], [[1, 1], [1, 1]])


@pytest.mark.parametrize("kind", KINDS)
def test_sampling_moments(kind):
    rng = np.random.default_rng(9)
    m = random_model(kind, rng)
    s = m.sample(np.random.default_rng(10), 200_000)
    sd = np.sqrt(np.diag(m.cov()))
    assert np.all(np.abs(s.mean(axis=0) - m.mean()) < 5 * sd / math.sqrt(len(s)))


def test_models_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    models = [random_model(k, rng) for k in KINDS]
    for m in models:
        w = rng.normal(size=2)
        assert model_from_dict(model_to_dict(m)).value(w) == m.value(w)
    import json
    p = tmp_path / "models.json"
    p.write_text(json.dumps({"models": [model_to_dict(m) for m in models]}))
    assert [type(m) for m in load_models(p)] == [type(m) for m in models]


def test_unknown_kind():
    with pytest.raises(ValueError):
        model_from_dict({"kind": "cauchy"})


def test_field_interval_range():
    g = Gaussian([0, 0], np.eye(2))
    with pytest.raises(ValueError):
        ObstacleField({(1, 3): g}, np.eye(2), 2)
    f = ObstacleField({(1, 1): g, (1, 2): g, (2, 2): g}, np.eye(2), 2)
    assert f.obstacles == [1, 2]
    assert f.restricted(1).pairs() == [(1, 1)]
