"""Regularized particle evolution of hemisphere vorticity.

A field is replaced by one particle per support cell with circulation
``v_i w_i``.  Particles move in the field of all particles through the
hemisphere kernel smoothed as

    |x - y|^2  ->  |x - y|^2 + delta^2,   |x - y'|^2  ->  |x - y'|^2 + delta^2.

Smoothing the image with the same ``delta`` keeps the smoothed kernel
symmetric and zero on the equator, so the equator stays a streamline; with an
exact image (``regularize_image=False``) particles in the first band leak
across it.  The flow conserves the total circulation, the multiset of
circulations, ``sum G x3`` and the regularized energy

    H_delta = 1/2 sum_ij G_i G_j (1/4pi) [ ln(|x_i - x_j'|^2 + delta_img^2)
                                           - ln(|x_i - x_j|^2 + delta^2) ],

self pairs included (``delta_img`` is ``delta`` or 0).  Stability runs re-deposit the particles onto the grid
and measure the distance to the rotation orbit of a reference field.  They
are numerical experiments on an approximate model, not checks of exact statements
about Euler solutions.
"""

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import geometry as geo
from .field import ScalarField, mass
from .maximizer import rotation_orbit_distance

DIAGNOSTIC_COLUMNS = ("t", "circulation", "energy_surrogate", "objective_surrogate",
                      "x3_center", "support_radius", "orbit_distance")


class EquatorCrossing(RuntimeError):
    """A particle left the open northern hemisphere."""


@dataclass
class ParticleField:
    positions: np.ndarray
    circulations: np.ndarray
    delta: float
    omega_frame: float = 0.0
    grid: object = None
    regularize_image: bool = True

    def __post_init__(self):
        self.positions = np.array(self.positions, dtype=float).reshape(-1, 3)
        self.circulations = np.array(self.circulations, dtype=float).ravel()
        if len(self.positions) != len(self.circulations):
            raise ValueError("one circulation per particle is required")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if np.any(self.positions[:, 2] <= 0.0):
            raise EquatorCrossing("particles must lie strictly inside the northern hemisphere")

    @property
    def n(self):
        return len(self.circulations)

    @property
    def circulation(self):
        return float(np.sum(self.circulations))

    def with_positions(self, x):
        return ParticleField(x, self.circulations, self.delta, self.omega_frame, self.grid,
                             self.regularize_image)

    @property
    def image_delta(self):
        return self.delta if self.regularize_image else 0.0


def default_delta(grid):
    return 2.0 * grid.cell_diagonal


def discretize(v, delta=None, omega_frame=0.0, regularize_image=True):
    """One particle per support cell, at the node, carrying ``v_i w_i``."""
    if np.any(v.values < 0.0):
        raise ValueError("discretize needs a nonnegative field")
    if mass(v) <= 0.0:
        raise ValueError("discretize needs a field with positive mass")
    g = v.grid
    idx = np.flatnonzero(v.values > 0.0)
    delta = default_delta(g) if delta is None else float(delta)
    return ParticleField(g.nodes[idx], v.values[idx] * g.weights[idx], delta, omega_frame, g,
                         regularize_image)


def _velocity_at(x, y, gam, delta, delta_img, omega):
    """Velocity at points ``x`` from particles ``(y, gam)``."""
    yi = y * np.array([1.0, 1.0, -1.0])
    d = x[:, None, :] - y[None, :, :]
    di = x[:, None, :] - yi[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", d, d) + delta ** 2
    di2 = np.einsum("ijk,ijk->ij", di, di) + delta_img ** 2
    # (y x x) / d2 - (y' x x) / di2 summed over sources in index order
    src = np.cross(y[None, :, :], x[:, None, :])
    img = np.cross(yi[None, :, :], x[:, None, :])
    u = np.einsum("ij,ijk->ik", gam[None, :] / d2, src)
    u -= np.einsum("ij,ijk->ik", gam[None, :] / di2, img)
    u /= 2.0 * np.pi
    if omega:
        u -= omega * np.cross(geo.NORTH, x)
    return u


def particle_velocity(pf, x):
    """Velocity of the particle flow at the point(s) ``x``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    out = _velocity_at(np.atleast_2d(x), pf.positions, pf.circulations, pf.delta,
                       pf.image_delta, pf.omega_frame)
    return out[0] if single else out


def energy_surrogate(pf):
    """Regularized particle energy ``H_delta`` (self pairs included)."""
    x, g = pf.positions, pf.circulations
    xi = x * np.array([1.0, 1.0, -1.0])
    d2 = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1) + pf.delta ** 2
    di2 = np.sum((x[:, None, :] - xi[None, :, :]) ** 2, axis=-1) + pf.image_delta ** 2
    k = (np.log(di2) - np.log(d2)) / (4.0 * np.pi)
    return 0.5 * float(g @ k @ g)


def particle_impulse(pf):
    return float(pf.circulations @ pf.positions[:, 2])


def particle_mass_center(pf):
    return pf.circulations @ pf.positions / pf.circulation


def support_radius(pf):
    """Largest geodesic distance from a particle to the direction of the mass center."""
    c = geo.normalize(particle_mass_center(pf))
    return float(np.max(geo.geodesic_distance(pf.positions, c)))


def deposit(pf, grid=None):
    """Bin particles into the cells containing them; cell value = circulation / area."""
    grid = grid or pf.grid
    if grid is None:
        raise ValueError("deposit needs a grid")
    idx = grid.nearest_node(pf.positions)
    vals = np.bincount(idx, weights=pf.circulations, minlength=grid.size) / grid.weights
    return ScalarField(grid, vals)


def slip_quantum(pf, grid=None):
    """Orbit distance caused by one particle landing in a neighboring empty cell.

    The smallest nonzero change nearest-cell deposition can register:
    ``max_i G_i sqrt(2 / w_i)`` (for ``p = 2``).
    """
    grid = grid or pf.grid
    w = grid.weights[grid.nearest_node(pf.positions)]
    return float(np.max(np.abs(pf.circulations) * np.sqrt(2.0 / w)))


def deposition_floor(pf, reference, n_angles=16, p=2.0):
    """Resolution of the deposited orbit distance for the particles ``pf``.

    The larger of :func:`slip_quantum` and the largest orbit distance produced
    by spinning the particles rigidly about their mass-center axis by
    ``k 2 pi / n_angles`` (spins that would cross the equator are skipped).
    A core moving only by its own symmetries cannot be told apart from the
    reference below this level.
    """
    grid = reference.grid
    axis = geo.normalize(particle_mass_center(pf))
    best = slip_quantum(pf, grid)
    for k in range(1, n_angles):
        x = geo.rotate(axis, 2.0 * np.pi * k / n_angles, pf.positions)
        if np.any(x[:, 2] <= 0.0):
            continue
        moved = pf.with_positions(x)
        best = max(best, rotation_orbit_distance(deposit(moved, grid), reference, p))
    return best


def displace(pf, fraction, distance, seed=0):
    """Move ``fraction`` of the particles by geodesic ``distance`` in random directions.

    Directions that would leave the hemisphere are redrawn (up to 100 times).
    """
    rng = np.random.default_rng(seed)
    n_move = max(1, int(round(fraction * pf.n)))
    chosen = np.sort(rng.choice(pf.n, size=n_move, replace=False))
    x = pf.positions.copy()
    for i in chosen:
        east, north = geo.tangent_basis(x[i])
        for _ in range(100):
            a = rng.uniform(0.0, 2.0 * np.pi)
            axis = np.cross(x[i], math.cos(a) * east + math.sin(a) * north)
            y = geo.rotate(geo.normalize(axis), distance, x[i])
            if y[2] > 0.0:
                x[i] = y
                break
    return pf.with_positions(x), chosen


@dataclass
class EvolveResult:
    rows: list
    final: ParticleField
    aborted: bool = False
    message: str = ""
    meta: dict = dc_field(default_factory=dict)

    def column(self, name):
        return np.array([r[name] for r in self.rows])


def _rk4(pf, dt):
    x, g = pf.positions, pf.circulations
    args = (g, pf.delta, pf.image_delta, pf.omega_frame)
    k1 = _velocity_at(x, x, *args)
    y1 = x + 0.5 * dt * k1
    k2 = _velocity_at(y1, y1, *args)
    y2 = x + 0.5 * dt * k2
    k3 = _velocity_at(y2, y2, *args)
    y3 = x + dt * k3
    k4 = _velocity_at(y3, y3, *args)
    y = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y / np.linalg.norm(y, axis=1, keepdims=True)


def diagnostics(pf, t, lam, reference=None):
    e = energy_surrogate(pf)
    c = particle_mass_center(pf)
    row = {
        "t": float(t),
        "circulation": pf.circulation,
        "energy_surrogate": e,
        "objective_surrogate": e - lam * particle_impulse(pf),
        "x1_center": float(c[0]),
        "x2_center": float(c[1]),
        "x3_center": float(c[2]),
        "support_radius": support_radius(pf),
        "orbit_distance": math.nan,
    }
    if reference is not None:
        row["orbit_distance"] = rotation_orbit_distance(deposit(pf, reference.grid), reference)
    return row


def evolve(pf, T, dt, lam=0.0, reference=None, sample_every=1):
    """RK4 particle run over ``[0, T]`` with diagnostics every ``sample_every`` steps.

    ``reference`` (a field) enables the orbit-distance column.  A particle at
    or below the equator ends the run early; the rows up to that point are
    returned with ``aborted=True``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if T < dt:
        raise ValueError("T must be >= dt")
    n_steps = int(math.floor(T / dt + 1e-9))
    rows = [diagnostics(pf, 0.0, lam, reference)]
    aborted, message = False, ""
    for s in range(1, n_steps + 1):
        x = _rk4(pf, dt)
        if np.any(x[:, 2] <= 0.0):
            aborted = True
            message = f"particle reached the equator at t={s * dt:.6g}"
            break
        pf = pf.with_positions(x)
        if s % sample_every == 0 or s == n_steps:
            rows.append(diagnostics(pf, s * dt, lam, reference))
    meta = {"delta": pf.delta, "dt": dt, "particles": pf.n, "lambda": lam,
            "omega_frame": pf.omega_frame}
    return EvolveResult(rows, pf, aborted, message, meta)


def drift(result, column="objective_surrogate"):
    c = result.column(column)
    return float(np.max(np.abs(c - c[0])))


def center_longitude_rate(result):
    """Mean rate of the unwrapped mass-center longitude over the run."""
    phi = np.unwrap(np.arctan2(result.column("x2_center"), result.column("x1_center")))
    t = result.column("t")
    return float((phi[-1] - phi[0]) / (t[-1] - t[0]))


def write_diagnostics_csv(result, path, header=()):
    with open(path, "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        for k, v in result.meta.items():
            fh.write(f"# {k}={v!r}\n")
        fh.write(",".join(DIAGNOSTIC_COLUMNS) + "\n")
        for r in result.rows:
            fh.write(",".join(repr(float(r[c])) for c in DIAGNOSTIC_COLUMNS) + "\n")
        fh.write(f"# aborted={str(result.aborted).lower()}\n")
        if result.message:
            fh.write(f"# message={result.message}\n")
