import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chanceplan.zonotope import (RightTriangle, Zonotope2, build_cover, contains_point, linear_map,
                                 minkowski_sum, rot, triangle_intersects_zonotope)


def random_zonotope(rng, n_gen=None):
    n_gen = n_gen or int(rng.integers(1, 6))
    return Zonotope2(rng.uniform(-5, 5, 2), rng.uniform(-2, 2, (2, n_gen)))


zonotopes = st.builds(
    lambda seed, n: random_zonotope(np.random.default_rng(seed), n),
    st.integers(0, 2 ** 32 - 1), st.integers(1, 5))


def test_point_translation():
    z = minkowski_sum(Zonotope2([0, 0], np.eye(2)), Zonotope2([1, 0]))
    assert np.array_equal(z.center, [1, 0])
    assert np.array_equal(z.generators, np.eye(2))


def test_sum_of_points():
    z = Zonotope2([0, 0]) + Zonotope2([0, 0])
    assert z.order == 0
    assert np.array_equal(z.center, [0, 0])


def test_sum_of_unit_boxes_contains_sampled_sums():
    rng = np.random.default_rng(0)
    a = Zonotope2.box([0, 0], [1, 1])
    z = minkowski_sum(a, a)
    lo, hi = z.bbox()
    assert np.allclose(hi - lo, [4, 4])
    pts = a.sample(rng, 1000) + a.sample(rng, 1000)
    assert z.contains(pts).all()


def test_identity_map():
    z = random_zonotope(np.random.default_rng(1))
    w = linear_map(np.eye(2), z)
    assert np.array_equal(w.center, z.center)
    assert np.array_equal(w.generators, z.generators)


def test_quarter_turn():
    z = linear_map(rot(math.pi / 2), Zonotope2([0, 0], np.diag([1.0, 2.0])))
    assert np.allclose(z.generators, [[0, -2], [1, 0]], atol=1e-15)


def test_random_map_keeps_images_inside():
    rng = np.random.default_rng(2)
    z = random_zonotope(rng)
    a = rng.normal(size=(2, 2))
    assert linear_map(a, z).contains(z.sample(rng, 1000) @ a.T).all()


def test_contains_center_and_outside_box():
    z = Zonotope2.box([1, 2], [3, 0.5])
    assert contains_point(z, z.center)
    assert not contains_point(z, [1 + 1.001 * 3, 2])
    assert not contains_point(z, [1, 2 + 1.001 * 0.5])


@settings(max_examples=50, deadline=None)
@given(zonotopes, st.integers(0, 1000))
def test_constructive_points_inside(z, seed):
    beta = np.random.default_rng(seed).uniform(-1, 1, (1000, z.order))
    assert z.contains(z.center + beta @ z.generators.T).all()


def test_contains_rejects_bad_input():
    with pytest.raises(ValueError):
        Zonotope2([0, np.nan], np.eye(2))
    with pytest.raises(ValueError):
        Zonotope2([0, 0], np.ones((3, 2)))


def test_box_cover_with_one_cell():
    z = Zonotope2.box([0, 0], [2, 1])
    cov = build_cover(z, 1)
    assert len(cov) == 2
    assert cov.area() == pytest.approx(8.0)
    # the two halves tile the box
    pts = z.sample(np.random.default_rng(3), 1000)
    inside = [t.contains(pts) for t in cov.triangles]
    assert (inside[0] | inside[1]).all()


def test_cover_of_rotated_square():
    z = Zonotope2.box([3, -1], [2, 2], angle=0.4)
    cov = build_cover(z, 24)
    pts = z.sample(np.random.default_rng(4), 10_000)
    assert cov.contains(pts).all()


def test_default_grid_size():
    z = Zonotope2.box([0, 0], [1, 1], angle=0.3)
    assert build_cover(z).grid_k == 24


def test_cover_rejects_bad_grid():
    with pytest.raises(ValueError):
        build_cover(Zonotope2.box([0, 0], [1, 1]), 0)


def test_degenerate_zonotope_is_padded():
    z = Zonotope2([1, 1], np.array([[1.0], [0.0]]))    # a segment
    cov = build_cover(z, 4)
    assert len(cov) > 0
    pts = z.sample(np.random.default_rng(5), 200)
    assert cov.contains(pts).all()


@settings(max_examples=40, deadline=None)
@given(zonotopes, st.sampled_from([6, 12, 24]), st.integers(0, 1000))
def test_cover_is_sound(z, k, seed):
    cov = build_cover(z, k)
    assert cov.contains(z.sample(np.random.default_rng(seed), 2000)).all()
    assert cov.area() >= z.area() - 1e-9


def test_triangle_at_center_intersects():
    z = Zonotope2.box([0, 0], [1, 1], angle=0.2)
    assert triangle_intersects_zonotope(RightTriangle([0, 0], (0.1, 0.1)), z)


def test_triangle_outside_bbox_misses():
    z = Zonotope2.box([0, 0], [1, 1], angle=0.2)
    assert not triangle_intersects_zonotope(RightTriangle([5, 5], (1, 1)), z)
    assert not triangle_intersects_zonotope(RightTriangle([-5, 0], (1, 1), orient=-1), z)


def test_grazing_contacts_match_sampling():
    # a triangle meets a convex set iff some point of the triangle lies in it;
    # dense sampling can only miss contacts thinner than its spacing
    rng = np.random.default_rng(6)
    z = Zonotope2.box([0, 0], [1, 1], angle=math.pi / 4)
    s = np.linspace(0, 1, 60)
    a, b = np.meshgrid(s, s)
    keep = a + b <= 1
    uv = np.stack([a[keep], b[keep]], -1)
    for _ in range(300):
        legs = tuple(rng.uniform(0.2, 1.0, 2))
        t = RightTriangle(rng.uniform(-2.5, 2.5, 2), legs, int(rng.choice([-1, 1])))
        pts = t.anchor + t.orient * uv * np.array(legs)
        sampled = bool(z.contains(pts).any())
        if sampled:
            assert triangle_intersects_zonotope(t, z)
        elif triangle_intersects_zonotope(t, z):
            # only a sliver can be missed by the sampling grid
            assert z.contains(pts, tol=0.05).any()


def test_touching_corner_counts_as_intersecting():
    z = Zonotope2.box([0, 0], [1, 1])
    assert triangle_intersects_zonotope(RightTriangle([1, 1], (1, 1)), z)
    assert not triangle_intersects_zonotope(RightTriangle([1 + 1e-6, 1], (1, 1)), z)


def test_vertices_and_area():
    z = Zonotope2.box([0, 0], [2, 1], angle=0.7)
    assert len(z.vertices()) == 4
    assert z.area() == pytest.approx(8.0)
    hs_a, hs_b = z.halfspaces()
    assert np.all(hs_a @ z.center <= hs_b)
