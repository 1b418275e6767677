"""N point vortices on the unit sphere, optionally in a frame rotating at rate Omega.

    dx_i/dt = sum_{j != i} (kappa_j / 2 pi) (x_j x x_i) / |x_i - x_j|^2 - Omega e3 x x_i

Conserved: H = -(1/2pi) sum_{i<j} kappa_i kappa_j ln|x_i - x_j| and the moment
M = sum kappa_i x_i (for Omega != 0 only its third component).
"""

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import geometry as geo
from .green import SingularityError

MIN_SEPARATION = 1e-10
ABORT_SEPARATION = 1e-8


@dataclass
class VortexConfiguration:
    positions: np.ndarray
    strengths: np.ndarray
    omega_frame: float = 0.0

    def __post_init__(self):
        x = np.array(self.positions, dtype=float).reshape(-1, 3)
        k = np.array(self.strengths, dtype=float).ravel()
        if len(x) != len(k):
            raise ValueError(f"{len(x)} positions but {len(k)} strengths")
        if len(x) == 0:
            raise ValueError("configuration has no vortices")
        if np.any(np.abs(np.linalg.norm(x, axis=1) - 1.0) > 1e-10):
            raise ValueError("vortex positions must be unit vectors")
        self.positions = x
        self.strengths = k
        self.omega_frame = float(self.omega_frame)
        sep = min_separation(x)
        if sep <= MIN_SEPARATION:
            raise SingularityError(f"vortices closer than {MIN_SEPARATION} (chord {sep:.3g})")

    @property
    def n(self):
        return len(self.strengths)

    def with_positions(self, x):
        return VortexConfiguration(x, self.strengths, self.omega_frame)


@dataclass
class ConservationReport:
    hamiltonian_drift: float
    moment_drift: float
    norm_drift: float

    def as_dict(self):
        return {"hamiltonian_drift": self.hamiltonian_drift,
                "moment_drift": self.moment_drift,
                "norm_drift": self.norm_drift}


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray  # (samples, n, 3)
    strengths: np.ndarray
    omega_frame: float
    report: ConservationReport
    aborted: bool = False
    message: str = ""
    steps: int = 0
    extra: dict = dc_field(default_factory=dict)


def min_separation(x):
    n = len(x)
    if n < 2:
        return math.inf
    d = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
    d[np.diag_indices(n)] = np.inf
    return float(d.min())


def _velocity(x, kappa, omega):
    diff = x[:, None, :] - x[None, :, :]  # x_i - x_j
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)
    if np.any(d2 == 0.0):
        raise SingularityError("coincident vortices")
    # (x_j x x_i) for every pair; row i sums over sources j in index order
    cr = np.cross(x[None, :, :], x[:, None, :])
    u = np.einsum("ij,ijk->ik", kappa[None, :] / d2, cr) / (2.0 * np.pi)
    if omega:
        u -= omega * np.cross(geo.NORTH, x)
    return u


def rhs(config):
    """Velocities of all vortices, one tangent 3-vector per row."""
    return _velocity(config.positions, config.strengths, config.omega_frame)


def invariants(config):
    """Return ``(H, M)``."""
    x = config.positions
    k = config.strengths
    H = 0.0
    for i in range(config.n):
        c = np.linalg.norm(x[i + 1:] - x[i], axis=1)
        if np.any(c == 0.0):
            raise SingularityError("coincident vortices")
        H -= float(np.sum(k[i] * k[i + 1:] * np.log(c)))
    return H / (2.0 * np.pi), k @ x


def integrate(config, T, dt, stride=1, min_sep=ABORT_SEPARATION):
    """Classical RK4 with fixed ``dt`` and renormalization after every step.

    The last step is shortened so the run ends exactly at ``T``.  Samples are
    kept every ``stride`` steps plus the final state.  A separation below
    ``min_sep`` stops the run; the partial trajectory is returned with
    ``aborted=True``.  Invariants are monitored at every step.
    """
    if dt <= 0 or T < dt:
        raise ValueError("need dt > 0 and T >= dt")
    stride = int(stride)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    kappa = config.strengths
    omega = config.omega_frame
    x = config.positions.copy()
    H0, M0 = invariants(config)
    # with a rotating frame only the axial moment is conserved
    m_mask = np.array([0.0, 0.0, 1.0]) if omega else np.ones(3)
    n_full = int(math.floor(T / dt + 1e-9))
    steps = [dt] * n_full
    rest = T - n_full * dt
    if rest > 1e-12 * T:
        steps.append(rest)
    times, samples = [0.0], [x.copy()]
    h_drift = m_drift = n_drift = 0.0
    t = 0.0
    aborted, message = False, ""
    done = 0
    for s, h in enumerate(steps, start=1):
        raw = _rk4_raw(x, kappa, omega, h)
        n_drift = max(n_drift, float(np.max(np.abs(np.linalg.norm(raw, axis=1) - 1.0))))
        y = raw / np.linalg.norm(raw, axis=1, keepdims=True)
        t = t + h if s < len(steps) else T
        sep = min_separation(y)
        if sep < min_sep:
            aborted = True
            message = f"minimum separation {sep:.3g} < {min_sep:g} at t={t:.6g}"
            break
        x = y
        done = s
        H, M = invariants(config.with_positions(x))
        h_drift = max(h_drift, abs(H - H0))
        m_drift = max(m_drift, float(np.linalg.norm((M - M0) * m_mask)))
        if s % stride == 0 or s == len(steps):
            times.append(t)
            samples.append(x.copy())
    report = ConservationReport(h_drift, m_drift, n_drift)
    return Trajectory(np.array(times), np.array(samples), kappa.copy(), omega, report,
                      aborted, message, done)


def _rk4_raw(x, kappa, omega, dt):
    k1 = _velocity(x, kappa, omega)
    k2 = _velocity(x + 0.5 * dt * k1, kappa, omega)
    k3 = _velocity(x + 0.5 * dt * k2, kappa, omega)
    k4 = _velocity(x + dt * k3, kappa, omega)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def pair_rate(theta0, kappa):
    """Angular rate lam of the odd pair, from 4 pi lam sin(theta0) = kappa."""
    s = math.sin(theta0)
    if s == 0.0:
        raise ValueError("theta0 = 0: the pair sits on the equator and has no finite rate")
    return kappa / (4.0 * math.pi * s)


def explicit_pair(theta0, phi0, kappa, omega_frame=0.0, t=0.0):
    """Closed-form odd pair at time ``t``.

    Strength ``kappa`` at latitude ``theta0`` and ``-kappa`` at ``-theta0``, both
    at longitude ``phi0 + (lam - Omega) t``.
    """
    lam = pair_rate(theta0, kappa)
    phi = phi0 + (lam - omega_frame) * t
    x = np.array([geo.from_spherical(phi, theta0), geo.from_spherical(phi, -theta0)])
    return VortexConfiguration(x, [kappa, -kappa], omega_frame)


def unwrapped_longitude(points):
    """Longitude along a sampled path, unwrapped to a continuous function."""
    points = np.asarray(points)
    return np.unwrap(np.arctan2(points[:, 1], points[:, 0]))


def measured_rate(traj, i=0):
    """Mean longitude rate of vortex ``i`` over the trajectory."""
    phi = unwrapped_longitude(traj.positions[:, i, :])
    return float((phi[-1] - phi[0]) / (traj.times[-1] - traj.times[0]))


def write_trajectory_csv(traj, path, header=()):
    """Rows ``t,i,x1,x2,x3,kappa_i`` then a ``#`` conservation summary block."""
    with open(path, "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write("t,i,x1,x2,x3,kappa_i\n")
        for t, x in zip(traj.times, traj.positions):
            for i, (p, k) in enumerate(zip(x, traj.strengths)):
                fh.write(f"{float(t)!r},{i},{float(p[0])!r},{float(p[1])!r},{float(p[2])!r},"
                         f"{float(k)!r}\n")
        fh.write("# summary\n")
        for key, val in traj.report.as_dict().items():
            fh.write(f"# {key}={val!r}\n")
        fh.write(f"# steps={traj.steps}\n")
        fh.write(f"# aborted={str(traj.aborted).lower()}\n")
        if traj.message:
            fh.write(f"# message={traj.message}\n")
