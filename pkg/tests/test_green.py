import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spherevortex import geometry as geo
from spherevortex.field import ScalarField, build_grid, energy
from spherevortex.green import (
    GreenOperator,
    SingularityError,
    apply,
    cache_path,
    kernel_hemisphere,
    kernel_sphere,
    load_blocks,
    save_blocks,
    self_cell_integral,
    stream_function,
    velocity_kernel,
)

from conftest import operator


def upper_points(n, seed):
    rng = np.random.default_rng(seed)
    p = geo.normalize(rng.normal(size=(n, 3)))
    p[:, 2] = np.abs(p[:, 2]) + 1e-3
    return geo.normalize(p)


def oracle_error(gp):
    x3 = gp.grid.x3
    return np.max(np.abs(gp.apply_values(2 * x3) - x3)) / np.max(np.abs(x3))


# --- pointwise kernels ------------------------------------------------------------


def test_kernel_sphere_examples():
    x = np.array([1.0, 0, 0])
    y = geo.rotate(geo.E3, np.pi / 3, x)  # chord 1
    assert abs(kernel_sphere(x, y)) <= 1e-15
    assert kernel_sphere(geo.NORTH, geo.SOUTH) == pytest.approx(-math.log(2) / (2 * np.pi))
    assert kernel_sphere(geo.NORTH, geo.SOUTH) == pytest.approx(-0.11032, abs=1e-5)
    a, b = upper_points(50, 1), upper_points(50, 2)
    assert np.array_equal(kernel_sphere(a, b), kernel_sphere(b, a))
    with pytest.raises(SingularityError):
        kernel_sphere(x, x)


def test_kernel_hemisphere_examples():
    y_eq = geo.from_spherical(1.2, 0.0)
    assert kernel_hemisphere(geo.from_spherical(0.3, 0.5), y_eq) == 0.0
    y = geo.from_spherical(0.0, np.pi / 6)
    val = kernel_hemisphere(geo.NORTH, y)
    assert val == pytest.approx(math.log(math.sqrt(3)) / (2 * np.pi), rel=1e-14)
    assert val == pytest.approx(0.08742, abs=1e-5)
    with pytest.raises(SingularityError):
        kernel_hemisphere(y, y)


@settings(max_examples=50)
@given(st.integers(0, 2 ** 31))
def test_kernel_hemisphere_symmetric_and_positive(seed):
    a, b = upper_points(20, seed), upper_points(20, seed + 1)
    k_ab = kernel_hemisphere(a, b)
    assert np.max(np.abs(k_ab - kernel_hemisphere(b, a))) <= 1e-12
    assert np.all(k_ab > 0)


def test_self_cell_integral_matches_disk_formula():
    # -(s^2/2)(ln s - 1/2) with s the chord radius of the disk
    for w in (1e-4, 1e-3, 1e-2):
        s = math.sqrt(w / np.pi)
        assert self_cell_integral(w) == pytest.approx(-(s * s / 2) * (math.log(s) - 0.5))


# --- discrete operator -----------------------------------------------------------------


def test_apply_examples(gp64):
    g = gp64.grid
    assert np.all(apply(gp64, g.zeros()).values == 0)
    assert oracle_error(gp64) <= 5e-3
    rng = np.random.default_rng(0)
    u = ScalarField(g, rng.normal(size=g.size))
    v = ScalarField(g, rng.normal(size=g.size))
    lhs = gp64.apply(u + v).values
    rhs = gp64.apply(u).values + gp64.apply(v).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_operator_oracle_refines():
    errs = [oracle_error(operator(*d)) for d in [(32, 16), (64, 32), (128, 64)]]
    assert errs[-1] <= 5e-3
    assert errs[0] > errs[1] > errs[2]


def test_apply_grid_mismatch(gp32):
    with pytest.raises(ValueError):
        gp32.apply(build_grid(16, 8).zeros())


def test_stream_function_examples(gp64):
    g = gp64.grid
    rng = np.random.default_rng(1)
    v = ScalarField(g, rng.normal(size=g.size))
    assert np.array_equal(stream_function(v, 0.0, gp64).values, gp64.apply(v).values)
    assert np.array_equal(stream_function(g.zeros(), 1.0, gp64).values, -g.x3)
    lam = 0.7
    s = stream_function(ScalarField(g, 2 * lam * g.x3), lam, gp64)
    assert np.max(np.abs(s.values)) <= lam * oracle_error(gp64) + 1e-15


def test_symmetry_and_definiteness(gp32):
    g = gp32.grid
    w = g.weights
    rng = np.random.default_rng(2)
    for _ in range(100):
        u, v = rng.normal(size=(2, g.size))
        assert abs(u @ (w * gp32.apply_values(v)) - v @ (w * gp32.apply_values(u))) <= 1e-10
        assert energy(ScalarField(g, u), gp32) > 0
    assert gp32.mode_spectrum().min() > 0


def test_dense_matrix_matches_fft_apply(gp32):
    K = gp32.dense()
    v = np.random.default_rng(3).normal(size=gp32.grid.size)
    assert np.max(np.abs(K @ v - gp32.apply_values(v))) <= 1e-13
    # weighted symmetry of the assembled entries
    w = gp32.grid.weights
    S = w[:, None] * K
    assert np.max(np.abs(S - S.T)) <= 1e-15
    off = ~np.eye(len(K), dtype=bool)
    assert np.all(K[off] > 0)


def test_far_entries_approximate_the_kernel(gp32):
    g = gp32.grid
    K = gp32.dense()
    a = g.size // 2
    b = np.arange(g.size)
    d = geo.geodesic_distance(g.nodes[a], g.nodes)
    far = d > 6 * g.cell_diagonal
    exact = kernel_hemisphere(g.nodes[a], g.nodes[b[far]]) * g.weights[far]
    assert np.max(np.abs(K[a, far] / exact - 1)) <= 2e-2


def test_boundary_decay():
    vals = []
    for dims in [(32, 16), (64, 32), (128, 64)]:
        gp = operator(*dims)
        g = gp.grid
        v = ScalarField(g, (g.nodes @ geo.from_spherical(0, 0.8) > math.cos(0.3)).astype(float))
        vals.append(np.max(np.abs(gp.apply(v).as_2d()[0])))
    assert vals[0] > vals[1] > vals[2]


# --- velocity kernel ---------------------------------------------------------------------


def test_velocity_kernel_examples():
    x = geo.from_spherical(0.4, 0.9)
    assert np.array_equal(velocity_kernel(x, geo.from_spherical(2.0, 0.0)), np.zeros(3))
    u = velocity_kernel(geo.NORTH, geo.from_spherical(1.1, 0.4))
    assert abs(u[2]) <= 1e-16
    ys = upper_points(100, 4)
    xs = upper_points(100, 5)
    assert np.max(np.abs(np.einsum("ij,ij->i", velocity_kernel(xs, ys), xs))) <= 1e-12
    with pytest.raises(SingularityError):
        velocity_kernel(x, x)


def test_velocity_circulation_around_source():
    y = geo.from_spherical(0.5, 0.7)
    e, n = geo.tangent_basis(y)
    r = 1e-3
    m = 2000
    t = (np.arange(m) + 0.5) * 2 * np.pi / m
    # small circle about y, counterclockwise seen from outside
    pts = geo.normalize(y + r * (np.cos(t)[:, None] * e + np.sin(t)[:, None] * n))
    tang = -np.sin(t)[:, None] * e + np.cos(t)[:, None] * n
    u = velocity_kernel(pts, np.broadcast_to(y, pts.shape))
    circ = np.sum(np.einsum("ij,ij->i", u, tang)) * r * 2 * np.pi / m
    assert circ == pytest.approx(1.0, abs=1e-3)


# --- cache ---------------------------------------------------------------------------------


def test_cache_round_trip(tmp_path, monkeypatch):
    g = build_grid(16, 8)
    monkeypatch.setenv("SPHEREVORTEX_KERNEL_CACHE", str(tmp_path))
    a = GreenOperator.build(g)
    path = cache_path(str(tmp_path), g)
    assert (tmp_path / path.split("/")[-1]).exists()
    b = GreenOperator.build(g)
    assert np.array_equal(a.blocks, b.blocks)
    data = bytearray(open(path, "rb").read())
    data[-1] ^= 0xFF
    open(path, "wb").write(bytes(data))
    with pytest.raises(ValueError, match="checksum"):
        load_blocks(path, g)
    with pytest.raises(ValueError):
        load_blocks(path, build_grid(32, 8))
    save_blocks(path, a)
    assert np.array_equal(load_blocks(path, g), a.blocks)
