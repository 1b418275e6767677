import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spherevortex import geometry as geo

angles = st.floats(-10.0, 10.0, allow_nan=False)


def random_points(n, seed=0):
    rng = np.random.default_rng(seed)
    return geo.normalize(rng.normal(size=(n, 3)))


@st.composite
def unit_vectors(draw):
    v = np.array([draw(st.floats(-1, 1)) for _ in range(3)])
    if np.linalg.norm(v) < 1e-3:
        v = np.array([0.3, -0.4, 0.5])
    return geo.normalize(v)


def test_from_spherical_examples():
    assert np.allclose(geo.from_spherical(0.0, 0.0), [1, 0, 0], atol=1e-15)
    assert np.allclose(geo.from_spherical(np.pi / 2, 0.0), [0, 1, 0], atol=1e-15)
    assert np.allclose(geo.from_spherical(0.0, np.pi / 6), [math.sqrt(3) / 2, 0, 0.5], atol=1e-15)


def test_poles_flagged_not_invertible():
    assert geo.is_invertible(0.3)
    assert not geo.is_invertible(np.pi / 2)
    assert np.allclose(geo.from_spherical(1.0, np.pi / 2), geo.NORTH)


@given(st.floats(0.0, 2 * np.pi, exclude_max=True), st.floats(-1.5, 1.5))
def test_spherical_round_trip(phi, theta):
    c = geo.to_spherical(geo.from_spherical(phi, theta))
    dphi = (c.phi - phi + np.pi) % (2 * np.pi) - np.pi
    assert abs(dphi) <= 1e-12
    assert abs(c.theta - theta) <= 1e-12
    assert 0.0 <= c.phi < 2 * np.pi


def test_geodesic_examples():
    a = geo.from_spherical(0.4, 0.2)
    assert geo.geodesic_distance(a, a) == 0.0
    assert geo.geodesic_distance(geo.NORTH, geo.SOUTH) == pytest.approx(np.pi, abs=1e-15)
    # chord sqrt(2) <-> quarter circle
    assert geo.geodesic_distance(geo.NORTH, np.array([1.0, 0, 0])) == pytest.approx(np.pi / 2)


def test_chord_geodesic_identity_random_pairs():
    a, b = random_points(1000, 1), random_points(1000, 2)
    d = geo.geodesic_distance(a, b)
    assert np.all((d >= 0) & (d <= np.pi))
    assert np.max(np.abs(geo.chord(a, b) - 2 * np.sin(d / 2))) <= 1e-12


def test_rotate_examples():
    x = np.array([1.0, 0, 0])
    assert np.allclose(geo.rotate(geo.E3, np.pi / 2, x), [0, 1, 0], atol=1e-15)
    assert np.array_equal(geo.rotate(geo.E3, 0.0, x), x)
    y = x
    for _ in range(3):
        y = geo.rotate(geo.E3, 2 * np.pi / 3, y)
    assert np.max(np.abs(y - x)) <= 1e-12


def test_rotate_rejects_non_unit_axis():
    with pytest.raises(ValueError):
        geo.rotate(np.array([0, 0, 2.0]), 0.1, geo.NORTH)


@settings(max_examples=50)
@given(unit_vectors(), angles)
def test_rotation_is_an_isometry(axis, alpha):
    pts = random_points(20, 3)
    r = geo.rotate(axis, alpha, pts)
    assert np.max(np.abs(np.linalg.norm(r, axis=1) - 1)) <= 1e-12
    before = geo.chord(pts[:, None], pts[None])
    after = geo.chord(r[:, None], r[None])
    assert np.max(np.abs(before - after)) <= 1e-12
    back = geo.rotate(axis, -alpha, r)
    assert np.max(np.abs(back - pts)) <= 1e-12


def test_reflect_equator_examples():
    assert np.array_equal(geo.reflect_equator(geo.NORTH), geo.SOUTH)
    e = np.array([1.0, 0, 0])
    assert np.array_equal(geo.reflect_equator(e), e)
    p = np.array([math.sqrt(3) / 2, 0, 0.5])
    assert np.array_equal(geo.reflect_equator(p), [math.sqrt(3) / 2, 0, -0.5])


def test_reflection_involution_and_commutes_with_e3_rotation():
    pts = random_points(200, 4)
    assert np.array_equal(geo.reflect_equator(geo.reflect_equator(pts)), pts)
    a = geo.rotate(geo.E3, 0.7, geo.reflect_equator(pts))
    b = geo.reflect_equator(geo.rotate(geo.E3, 0.7, pts))
    assert np.max(np.abs(a - b)) <= 1e-12
    assert np.max(np.abs(np.linalg.norm(geo.reflect_equator(pts), axis=1) - 1)) <= 1e-12


def test_cap_area_examples():
    assert geo.cap_area(np.pi / 2) == pytest.approx(2 * np.pi, rel=1e-15)
    assert geo.cap_area(np.pi) == pytest.approx(4 * np.pi, rel=1e-15)
    assert geo.cap_area(0.3) == pytest.approx(2 * np.pi * (1 - math.cos(0.3)), rel=1e-13)
    assert geo.cap_area(0.3) == pytest.approx(0.280629, abs=1e-6)


@pytest.mark.parametrize("r", [-0.1, np.pi + 0.01])
def test_cap_area_range(r):
    with pytest.raises(ValueError):
        geo.cap_area(r)


@given(st.floats(0, np.pi), st.floats(0, np.pi))
def test_cap_area_monotone_and_invertible(r1, r2):
    if r1 < r2:
        assert geo.cap_area(r1) <= geo.cap_area(r2)
    assert geo.cap_radius(geo.cap_area(r1)) == pytest.approx(r1, abs=1e-7)


def test_tangent_basis_is_orthonormal_frame():
    x = random_points(50, 5)
    e, n = geo.tangent_basis(x)
    for v in (e, n):
        assert np.allclose(np.linalg.norm(v, axis=1), 1)
        assert np.allclose(np.einsum("ij,ij->i", v, x), 0, atol=1e-15)
    # (east, north, x) is right-handed
    assert np.allclose(np.cross(e, n), x)
