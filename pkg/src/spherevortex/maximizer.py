"""Ascent by rearrangement for max { E(v) - lam I(v) : v in a rearrangement class }.

Each step maximizes the linearization of the objective at the current iterate
over the class: with ``psi = G+ v_k - lam x3`` the next iterate is the patch on
the superlevel set of ``psi`` (bathtub) or, for a sampled profile, the monotone
coupling of the profile with ``psi``.  Because

    obj(v') - obj(v) = L_v(v') - L_v(v) + E(v' - v)

with ``L_v`` the linearization and ``E`` positive definite, every such step
increases the objective unless the iterate is a fixed point.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import geometry as geo
from .field import (
    HEMISPHERE_AREA,
    ScalarField,
    bump_battery,
    bathtub_level,
    class_compare,
    class_field,
    impulse,
    inner,
    mass,
    mass_center,
    support_diameter,
    weak_residual,
)

log = logging.getLogger(__name__)


@dataclass
class MaximizerConfig:
    lam: float
    cls: object
    init_center: object = "auto"
    tol_area: float = 1e-3
    tol_obj: float = 1e-10
    max_iter: int = 500
    n_phi: int = 128
    n_theta: int = 64

    def __post_init__(self):
        if self.tol_area <= 0 or self.tol_obj <= 0:
            raise ValueError("tolerances must be positive")
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be >= 1")
        self.max_iter = int(self.max_iter)


@dataclass
class MaximizerReport:
    field: ScalarField
    objective_history: list
    mu: float
    mass_center: np.ndarray
    core_diameter: float
    core_area: float
    iterations: int
    converged: bool
    energy: float
    impulse: float
    lam: float
    weak_residuals: list = dc_field(default_factory=list)
    class_preserved: list = dc_field(default_factory=list)
    cycle_guard_used: int = 0
    starts: list = dc_field(default_factory=list)

    @property
    def objective(self):
        return self.objective_history[-1]

    def to_dict(self):
        c = self.mass_center
        return {
            "objective": self.objective,
            "energy": self.energy,
            "impulse": self.impulse,
            "lambda": self.lam,
            "mu": self.mu,
            "mass_center": [float(x) for x in c],
            "core_diameter": self.core_diameter,
            "core_area": self.core_area,
            "iterations": self.iterations,
            "converged": bool(self.converged),
            "cycle_guard_used": self.cycle_guard_used,
            "weak_residual_max": max((abs(r) for r in self.weak_residuals), default=0.0),
            "class_preserved_all": bool(all(self.class_preserved)),
            "objective_history": [float(x) for x in self.objective_history],
        }


def default_center(lam, cls):
    """Start at longitude 0 on the latitude predicted for the point-vortex limit.

    The height ``x3`` is ``kappa / (4 pi lam)`` clamped to ``[eps, 1 - eps]``.
    """
    eps = cls.epsilon
    if lam > 0:
        target = cls.kappa / (4.0 * np.pi * lam)
    else:
        target = 1.0
    x3 = min(max(target, eps), 1.0 - eps)
    return geo.from_spherical(0.0, math.asin(x3))


def initial_field(cls, grid, center):
    """Profile arranged monotonically around ``center`` (a cap for a patch)."""
    center = geo.as_point(np.asarray(center, dtype=float))
    closeness = ScalarField(grid, grid.nodes @ center)
    return class_field(cls, closeness)


def _l1_area(u, v, scale):
    return float(np.sum(np.abs(u.values - v.values) * u.grid.weights)) / scale


def core_area(v):
    return float(np.sum(v.grid.weights[v.values > 0.0]))


def ascend(cfg, gp, init=None):
    """Maximize over the class; returns a :class:`MaximizerReport`.

    ``init`` (a field in the class) or ``cfg.init_center`` (a point) gives a
    single ascent run.  ``init_center="predicted"`` starts at
    :func:`default_center`.  ``init_center="auto"`` runs :func:`latitude_search`:
    a concentrated patch barely moves under the discrete iteration, so the
    starting latitude is optimized over instead of being guessed.
    Non-convergence is reported, never raised.
    """
    if init is not None:
        return ascend_from(cfg, gp, init)
    center = cfg.init_center
    if isinstance(center, str):
        if center == "auto":
            return latitude_search(cfg, gp)
        if center == "predicted":
            center = default_center(cfg.lam, cfg.cls)
        else:
            raise ValueError(f"unknown init_center {center!r}")
    return ascend_from(cfg, gp, initial_field(cfg.cls, gp.grid, center))


def _check_problem(cfg):
    if cfg.cls.support_area >= HEMISPHERE_AREA:
        raise ValueError("class support must be smaller than the hemisphere")
    if cfg.lam <= 0:
        warnings.warn("lam <= 0: existence holds but the concentration results need lam > 0",
                      RuntimeWarning, stacklevel=3)


def ascend_from(cfg, gp, v, _checked=False):
    """One ascent run from the class member ``v``."""
    if not _checked:
        _check_problem(cfg)
    grid = gp.grid
    cls = cfg.cls
    lam = float(cfg.lam)
    x3 = grid.x3
    cell = grid.max_cell_area
    scale = max(cls.values)
    tol_area = cfg.tol_area * cls.support_area

    def evaluate(field):
        gv = gp.apply_values(field.values)
        e = 0.5 * inner(field, ScalarField(grid, gv))
        return gv, e, impulse(field)

    gv, e, i = evaluate(v)
    history = [e - lam * i]
    preserved = [class_compare(v, cls, cell)]
    prev_psi = None
    prev_v = None
    converged = False
    guard = 0
    it = 0
    for it in range(1, cfg.max_iter + 1):
        psi = ScalarField(grid, gv - lam * x3)
        v_new = class_field(cls, psi)
        gv_new, e_new, i_new = evaluate(v_new)
        obj_new = e_new - lam * i_new
        if prev_v is not None and _l1_area(v_new, prev_v, scale) <= tol_area \
                and _l1_area(v_new, v, scale) > tol_area:
            # discrete 2-cycle: step once on the averaged potential, keep it only if it ascends
            guard += 1
            avg = ScalarField(grid, 0.5 * (psi.values + prev_psi.values))
            trial = class_field(cls, avg)
            gv_t, e_t, i_t = evaluate(trial)
            if e_t - lam * i_t >= history[-1]:
                v_new, gv_new, e_new, i_new = trial, gv_t, e_t, i_t
                obj_new = e_t - lam * i_t
        d_area = _l1_area(v_new, v, scale)
        d_obj = obj_new - history[-1]
        prev_v, prev_psi = v, psi
        v, gv, e, i = v_new, gv_new, e_new, i_new
        history.append(obj_new)
        preserved.append(class_compare(v, cls, cell))
        log.debug("iter %d obj %.15g d_area %.3g d_obj %.3g", it, obj_new, d_area, d_obj)
        if d_area <= tol_area and abs(d_obj) <= cfg.tol_obj * abs(obj_new):
            converged = True
            break
        if guard > 3:
            break

    return finalize(v, gp, cfg, history, it, converged, preserved, guard)


def _start_at(cfg, gp, theta):
    center = geo.from_spherical(0.0, theta)
    return ascend_from(cfg, gp, initial_field(cfg.cls, gp.grid, center), _checked=True)


def latitude_search(cfg, gp, n_scan=12, n_refine=10):
    """Best ascent result over starting latitudes (longitude is irrelevant by symmetry).

    Scans ``n_scan`` latitudes from one band above the equator to the pole,
    plus the predicted point-vortex latitude, then refines around the best
    start by golden-section search.  Every candidate is a full monotone
    ascent; the report of the highest final objective is returned with the
    explored starts in ``report.starts``.
    """
    _check_problem(cfg)
    g = gp.grid
    lo, hi = g.theta[0], 0.5 * np.pi
    thetas = list(np.linspace(lo, hi, n_scan))
    pred = default_center(cfg.lam, cfg.cls)[2]
    thetas.append(math.asin(pred))
    results = {}

    def run(theta):
        key = round(float(theta), 12)
        if key not in results:
            results[key] = _start_at(cfg, gp, theta)
        return results[key].objective

    for t in thetas:
        run(t)
    ordered = sorted(results)
    best = max(ordered, key=lambda k: results[k].objective)
    idx = ordered.index(best)
    a = ordered[max(idx - 1, 0)]
    b = ordered[min(idx + 1, len(ordered) - 1)]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    for _ in range(n_refine):
        if b - a < 0.25 * g.dtheta:
            break
        if run(c) >= run(d):
            b, d = d, c
            c = b - invphi * (b - a)
        else:
            a, c = c, d
            d = a + invphi * (b - a)
    best = max(results, key=lambda k: (results[k].objective, -k))
    report = results[best]
    report.starts = [(k, results[k].objective, float(results[k].mass_center[2]))
                     for k in sorted(results)]
    return report


def finalize(v, gp, cfg, history, iterations, converged, preserved=(), guard=0):
    """Collect all diagnostics of a (converged) iterate."""
    grid = gp.grid
    cls = cfg.cls
    lam = float(cfg.lam)
    gv = gp.apply_values(v.values)
    psi = ScalarField(grid, gv - lam * grid.x3)
    mu, _ = bathtub_level(psi, cls.support_area)
    e = 0.5 * inner(v, ScalarField(grid, gv))
    i = impulse(v)
    xc = mass_center(v)
    battery = bump_battery(xc, cls.epsilon)
    residuals = [weak_residual(v, lam, xi, gp) for xi in battery]
    return MaximizerReport(
        field=v,
        objective_history=list(history),
        mu=mu,
        mass_center=xc,
        core_diameter=support_diameter(v, 0.0),
        core_area=core_area(v),
        iterations=iterations,
        converged=converged,
        energy=e,
        impulse=i,
        lam=lam,
        weak_residuals=residuals,
        class_preserved=list(preserved),
        cycle_guard_used=guard,
    )


def objective_is_monotone(history, rel=1e-12):
    h = np.asarray(history)
    return bool(np.all(np.diff(h) >= -rel * np.maximum(np.abs(h[:-1]), 1e-300)))


# ----------------------------------------------------------------------------
# diagnostics
# ----------------------------------------------------------------------------


def lagrange_lower_bound_check(report, cls):
    """Return ``(mu, mu + (kappa / 2 pi) ln eps)``; the second stays bounded below as eps -> 0."""
    return report.mu, report.mu + cls.kappa / (2.0 * np.pi) * math.log(cls.epsilon)


def energy_lower_bound_check(report, cls):
    """Return ``E + (kappa^2 / 4 pi) ln eps``."""
    return report.energy + cls.kappa ** 2 / (4.0 * np.pi) * math.log(cls.epsilon)


def patch_energy_floor(kappa, eps):
    """Lower bound (kappa^2 / 4 pi) ln(cos eps / sin eps) on the energy of a polar patch.

    Holds for the uniform patch of mass ``kappa`` on the cap of radius
    ``eps <= pi/4`` at the north pole: on that cap |x - y| <= 2 sin eps and
    |x - y'| >= 2 cos eps.
    """
    return kappa ** 2 / (4.0 * np.pi) * math.log(math.cos(eps) / math.sin(eps))


def level_set_certificate(report, cfg, gp):
    """Area of {v > 0} symmetric-difference {psi > mu}, in steradians.

    Cells with ``psi`` equal to ``mu`` up to round-off are ties (the level set
    itself) and are not counted.
    """
    v = report.field
    grid = v.grid
    psi = gp.apply_values(v.values) - cfg.lam * grid.x3
    tie = 1e-12 * max(float(np.max(np.abs(psi))), 1e-300)
    pos = v.values > 0.0
    wrong = (pos & (psi < report.mu - tie)) | (~pos & (psi > report.mu + tie))
    return float(np.sum(grid.weights[wrong]))


def rotation_orbit_distance(u, v, p=2.0):
    """min over integer longitude shifts k of || u - v shifted by k ||_{L^p}."""
    if u.grid != v.grid:
        raise ValueError("orbit distance needs fields on the same grid")
    g = u.grid
    a = u.as_2d()
    b = v.as_2d()
    w = g.band_weights[:, None]
    best = np.inf
    for k in range(g.n_phi):
        d = float(np.sum(np.abs(a - np.roll(b, k, axis=1)) ** p * w)) ** (1.0 / p)
        best = min(best, d)
    return best


# ----------------------------------------------------------------------------
# epsilon sweep
# ----------------------------------------------------------------------------

SWEEP_COLUMNS = (
    "epsilon", "lambda", "kappa", "objective", "mu", "mu_normalized", "E", "E_normalized",
    "x3_center", "diameter", "diameter_over_eps", "iterations", "converged",
)


def grid_for_epsilon(eps, cells_per_radius=4, min_theta=16):
    """Grid whose equatorial cells are square with ``eps`` spanning ~``cells_per_radius`` bands."""
    n_theta = max(min_theta, int(math.ceil(0.5 * math.pi * cells_per_radius / eps)))
    n_theta = 8 * int(math.ceil(n_theta / 8))
    return 4 * n_theta, n_theta


def sweep_row(report, cls):
    mu, mu_n = lagrange_lower_bound_check(report, cls)
    return {
        "epsilon": cls.epsilon,
        "lambda": report.lam,
        "kappa": cls.kappa,
        "objective": report.objective,
        "mu": mu,
        "mu_normalized": mu_n,
        "E": report.energy,
        "E_normalized": energy_lower_bound_check(report, cls),
        "x3_center": float(report.mass_center[2]),
        "diameter": report.core_diameter,
        "diameter_over_eps": report.core_diameter / cls.epsilon,
        "iterations": report.iterations,
        "converged": bool(report.converged),
    }


def no_downward_trend(series, frac=0.1):
    """True if the series ends no lower than ``frac`` of its largest magnitude below its start."""
    s = np.asarray(series, dtype=float)
    drop = s[0] - s[-1]
    return bool(drop <= frac * np.max(np.abs(s)))


def sweep_summary(rows, lam, kappa):
    """Trend checks over a decreasing-epsilon sweep.

    Returns a dict of named booleans and the measured quantities behind them.
    """
    target = min(1.0, kappa / (4.0 * np.pi * lam))
    gaps = [abs(r["x3_center"] - target) for r in rows]
    ratio = [r["diameter_over_eps"] for r in rows]
    mun = [r["mu_normalized"] for r in rows]
    en = [r["E_normalized"] for r in rows]
    return {
        "x3_target": target,
        "x3_gaps": gaps,
        "x3_gap_decreasing": all(b <= a for a, b in zip(gaps, gaps[1:])),
        "diameter_over_eps_max": max(ratio),
        "diameter_over_eps_trend_ok": all(b <= 1.2 * a for a, b in zip(ratio, ratio[1:])),
        "mu_normalized_min": min(mun),
        "mu_normalized_trend_ok": no_downward_trend(mun),
        "E_normalized_min": min(en),
        "E_normalized_trend_ok": no_downward_trend(en),
        "all_converged": all(r["converged"] for r in rows),
    }
