"""Exact geometric primitives on the unit 2-sphere.

Points are Cartesian unit vectors stored as float arrays of shape ``(3,)`` or
``(..., 3)``. Spherical coordinates (longitude ``phi``, latitude ``theta``)
appear only at I/O boundaries.
"""

from typing import NamedTuple

import numpy as np

NORTH = np.array([0.0, 0.0, 1.0])
SOUTH = np.array([0.0, 0.0, -1.0])
E3 = NORTH

UNIT_TOL = 1e-12


class SphericalCoords(NamedTuple):
    phi: float
    theta: float


def normalize(x):
    """Project onto the sphere along the ray (rescale to unit length)."""
    x = np.asarray(x, dtype=float)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def as_point(x):
    """Validate and return a unit vector (or stack of them)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3:
        raise ValueError(f"expected trailing dimension 3, got shape {x.shape}")
    err = np.abs(np.linalg.norm(x, axis=-1) - 1.0)
    if np.any(err > 1e-10):
        raise ValueError(f"point(s) not on the unit sphere (max |norm-1| = {err.max():.3e})")
    return x


def from_spherical(phi, theta):
    """Cartesian point(s) from longitude ``phi`` and latitude ``theta``.

    Poles are accepted; use :func:`is_invertible` to check whether ``phi`` can
    be recovered.
    """
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    ct = np.cos(theta)
    return np.stack([ct * np.cos(phi), ct * np.sin(phi), np.sin(theta)], axis=-1)


def to_spherical(x):
    """Return ``SphericalCoords`` with ``phi`` in [0, 2pi)."""
    x = np.asarray(x, dtype=float)
    phi = np.mod(np.arctan2(x[..., 1], x[..., 0]), 2 * np.pi)
    theta = np.arctan2(x[..., 2], np.hypot(x[..., 0], x[..., 1]))
    return SphericalCoords(phi, theta)


def is_invertible(theta):
    return bool(np.all(np.abs(np.asarray(theta)) < np.pi / 2))


def chord(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b), axis=-1)


def geodesic_distance(a, b):
    """Great-circle distance in radians, in [0, pi].

    Computed from the chord through ``|a - b| = 2 sin(d/2)`` and, for nearly
    antipodal points, from ``|a + b| = 2 cos(d/2)`` to keep full accuracy.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c_minus = np.linalg.norm(a - b, axis=-1)
    c_plus = np.linalg.norm(a + b, axis=-1)
    return 2.0 * np.arctan2(c_minus, c_plus)


def rotate(axis, alpha, x):
    """Rotate ``x`` by angle ``alpha`` about the unit vector ``axis`` (Rodrigues).

    The result is renormalized to absorb rounding.
    """
    p = np.asarray(axis, dtype=float)
    if p.shape != (3,) or abs(np.linalg.norm(p) - 1.0) > 1e-12:
        raise ValueError("rotation axis must be a unit 3-vector")
    x = np.asarray(x, dtype=float)
    ca, sa = np.cos(alpha), np.sin(alpha)
    px = np.cross(p, x)
    pdx = x @ p
    out = ca * x + sa * px + (1.0 - ca) * np.multiply.outer(pdx, p)
    return normalize(out)


def rotate_e3(alpha, x):
    """Rotation about the polar axis; exact longitude shift by ``alpha``."""
    x = np.asarray(x, dtype=float)
    ca, sa = np.cos(alpha), np.sin(alpha)
    out = np.empty_like(x)
    out[..., 0] = ca * x[..., 0] - sa * x[..., 1]
    out[..., 1] = sa * x[..., 0] + ca * x[..., 1]
    out[..., 2] = x[..., 2]
    return out


def reflect_equator(x):
    """Mirror image across the equatorial plane: (x1, x2, x3) -> (x1, x2, -x3)."""
    out = np.array(x, dtype=float, copy=True)
    out[..., 2] = -out[..., 2]
    return out


def cap_area(r):
    """Area of the geodesic disk of radius ``r``: 2 pi (1 - cos r)."""
    r = float(r)
    if not 0.0 <= r <= np.pi:
        raise ValueError(f"cap radius must lie in [0, pi], got {r}")
    # 1 - cos r = 2 sin^2(r/2), stable for small r
    return 4.0 * np.pi * np.sin(0.5 * r) ** 2


def cap_radius(area):
    """Inverse of :func:`cap_area`."""
    if not 0.0 <= area <= 4 * np.pi:
        raise ValueError(f"cap area must lie in [0, 4pi], got {area}")
    return 2.0 * np.arcsin(np.sqrt(area / (4.0 * np.pi)))


def tangent_basis(x):
    """Unit eastward and northward vectors at ``x`` (undefined at the poles)."""
    x = np.asarray(x, dtype=float)
    rho = np.hypot(x[..., 0], x[..., 1])
    east = np.stack([-x[..., 1] / rho, x[..., 0] / rho, np.zeros_like(rho)], axis=-1)
    north = np.stack([-x[..., 2] * x[..., 0] / rho, -x[..., 2] * x[..., 1] / rho, rho], axis=-1)
    return east, north
