"""Hemisphere grid, scalar fields, integral functionals and rearrangements.

Nodes are cell centers of a regular longitude/latitude tessellation of the
open northern hemisphere, ordered latitude-major: node ``k = j * n_phi + i``
sits at latitude band ``j`` (``j = 0`` touches the equator) and longitude
column ``i``.  Cell areas are exact, ``(2 pi / n_phi) (sin t_hi - sin t_lo)``,
so the weights sum to ``2 pi`` up to rounding and integer longitude shifts are
exact measure-preserving rotations.
"""

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import geometry as geo

HEMISPHERE_AREA = 2.0 * np.pi
N_LEVELS = 64


def _sum(terms, compensated=False):
    terms = np.asarray(terms, dtype=float).ravel()
    if compensated:
        return math.fsum(terms)
    return float(np.sum(terms))


# ----------------------------------------------------------------------------
# grid
# ----------------------------------------------------------------------------


class HemisphereGrid:
    """Cell-centered latitude-longitude grid of the open northern hemisphere."""

    def __init__(self, n_phi, n_theta):
        n_phi, n_theta = int(n_phi), int(n_theta)
        if n_phi < 4 or n_theta < 1:
            raise ValueError(f"grid needs n_phi >= 4 and n_theta >= 1, got ({n_phi}, {n_theta})")
        self.n_phi = n_phi
        self.n_theta = n_theta
        self.dphi = 2.0 * np.pi / n_phi
        self.dtheta = 0.5 * np.pi / n_theta
        self.theta_edges = np.linspace(0.0, 0.5 * np.pi, n_theta + 1)
        self.theta_edges[-1] = 0.5 * np.pi
        sin_e = np.sin(self.theta_edges)
        # nodes sit on the latitude that halves the band area; there sin(theta)
        # is the band mean of x3, so impulse quadrature of constants is exact
        self.theta = np.arcsin(0.5 * (sin_e[:-1] + sin_e[1:]))
        self.phi = (np.arange(n_phi) + 0.5) * self.dphi
        self.band_weights = self.dphi * np.diff(sin_e)
        tt, pp = np.meshgrid(self.theta, self.phi, indexing="ij")
        self.node_theta = tt.ravel()
        self.node_phi = pp.ravel()
        self.nodes = geo.from_spherical(self.node_phi, self.node_theta)
        self.weights = np.repeat(self.band_weights, n_phi)
        for arr in (self.theta, self.phi, self.nodes, self.weights, self.node_theta, self.node_phi):
            arr.flags.writeable = False

    @property
    def size(self):
        return self.n_phi * self.n_theta

    @property
    def shape(self):
        return (self.n_theta, self.n_phi)

    @property
    def x3(self):
        return self.nodes[:, 2]

    @property
    def cell_diagonal(self):
        """Largest geodesic cell diagonal (attained in the equatorial band)."""
        return float(np.hypot(self.dphi * np.cos(self.theta_edges[0]), self.dtheta))

    @property
    def max_cell_area(self):
        return float(self.band_weights.max())

    def key(self):
        return (self.n_phi, self.n_theta)

    def __eq__(self, other):
        return isinstance(other, HemisphereGrid) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"HemisphereGrid(n_phi={self.n_phi}, n_theta={self.n_theta})"

    def field(self, values, nonnegative=False):
        return ScalarField(self, values, nonnegative=nonnegative)

    def zeros(self):
        return ScalarField(self, np.zeros(self.size))

    def evaluate(self, fn, nonnegative=False):
        """Sample ``fn(nodes)`` (nodes of shape ``(n, 3)``) into a field."""
        return ScalarField(self, fn(self.nodes), nonnegative=nonnegative)

    def nearest_node(self, x):
        """Index of the cell containing the point(s) ``x``."""
        x = np.asarray(x, dtype=float)
        phi, theta = geo.to_spherical(x)
        j = np.clip(np.floor(theta / self.dtheta).astype(int), 0, self.n_theta - 1)
        i = np.floor(phi / self.dphi).astype(int) % self.n_phi
        return j * self.n_phi + i

    def shift_index(self, k):
        """Node permutation realizing a rotation by ``k`` longitude cells."""
        idx = np.arange(self.size).reshape(self.shape)
        return np.roll(idx, k, axis=1).ravel()


def build_grid(n_phi, n_theta):
    return HemisphereGrid(n_phi, n_theta)


# ----------------------------------------------------------------------------
# fields
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: HemisphereGrid
    values: np.ndarray
    nonnegative: bool = False

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True).ravel()
        if vals.shape != (self.grid.size,):
            raise ValueError(f"field has {vals.size} values, grid has {self.grid.size} nodes")
        if self.nonnegative and np.any(vals < 0):
            raise ValueError("field tagged nonnegative has negative values")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def as_2d(self):
        return self.values.reshape(self.grid.shape)

    def shifted(self, k):
        """Field rotated eastward by ``k`` longitude cells (exact)."""
        vals = np.roll(self.as_2d(), k, axis=1)
        return ScalarField(self.grid, vals, nonnegative=self.nonnegative)

    def with_values(self, values):
        return ScalarField(self.grid, values, nonnegative=self.nonnegative)

    def __add__(self, other):
        _check_same_grid(self, other)
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other):
        _check_same_grid(self, other)
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, c):
        return ScalarField(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def support(self, threshold=0.0):
        return self.values > threshold


def _check_same_grid(u, v):
    if u.grid != v.grid:
        raise ValueError(f"grid mismatch: {u.grid} vs {v.grid}")


def integrate(v, compensated=False):
    return _sum(v.values * v.grid.weights, compensated)


def mass(v, compensated=False):
    return integrate(v, compensated)


def impulse(v, compensated=False):
    return _sum(v.grid.x3 * v.values * v.grid.weights, compensated)


def inner(u, v, compensated=False):
    """L2 pairing sum_i u_i v_i w_i."""
    _check_same_grid(u, v)
    return _sum(u.values * v.values * u.grid.weights, compensated)


def energy(v, gp, compensated=False):
    """Kinetic energy E(v) = 1/2 sum_i v_i (G+ v)_i w_i."""
    return 0.5 * inner(v, gp.apply(v), compensated)


def objective(v, lam, gp, compensated=False):
    """Energy minus ``lam`` times impulse."""
    return energy(v, gp, compensated) - lam * impulse(v, compensated)


def mass_center(v):
    """Vorticity-weighted mean position (1/kappa) sum x_i v_i w_i."""
    m = mass(v)
    if m <= 0.0:
        raise ValueError("mass center undefined for a field with nonpositive mass")
    vw = v.values * v.grid.weights
    return np.array([_sum(v.grid.nodes[:, c] * vw) for c in range(3)]) / m


def _max_pairwise_geodesic(pts):
    n = len(pts)
    if n <= 1:
        return 0.0
    # the farthest pair has the smallest dot product; the chord sqrt(2 - 2 g)
    # then gives the geodesic distance 2 asin(chord / 2)
    g_min = 1.0
    block = 2048
    for s in range(0, n, block):
        g_min = min(g_min, float(np.min(pts[s:s + block] @ pts.T)))
    c = np.sqrt(max(2.0 - 2.0 * g_min, 0.0))
    return float(2.0 * np.arcsin(min(c / 2.0, 1.0)))


def support_diameter(v, threshold=0.0):
    """Largest geodesic distance between two nodes where ``v > threshold``."""
    return _max_pairwise_geodesic(v.grid.nodes[v.values > threshold])


# ----------------------------------------------------------------------------
# rearrangement classes
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class RearrangementClass:
    """Admissible set: all fields with the distribution of a reference profile.

    ``kind`` is ``"patch"`` (value ``gamma`` on a set of area ``area``) or
    ``"sampled"`` (``values[k]`` on area ``areas[k]``, values nonnegative).
    """

    kind: str
    values: tuple
    areas: tuple
    p: float = 2.0
    epsilon: float = np.pi / 2
    K: float = np.inf
    extra: dict = dc_field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in ("patch", "sampled"):
            raise ValueError(f"unknown class kind {self.kind!r}")
        if not 1.0 < self.p < np.inf:
            raise ValueError(f"Lebesgue exponent must lie in (1, inf), got {self.p}")
        if not 0.0 < self.epsilon <= np.pi / 2 + 1e-15:
            raise ValueError(f"epsilon must lie in (0, pi/2], got {self.epsilon}")
        vals = np.asarray(self.values, dtype=float)
        areas = np.asarray(self.areas, dtype=float)
        if vals.shape != areas.shape or vals.ndim != 1 or vals.size == 0:
            raise ValueError("profile values and areas must be equal-length 1-d sequences")
        if np.any(vals < 0) or np.any(areas <= 0):
            raise ValueError("profile values must be >= 0 and areas > 0")
        if self.kind == "patch" and vals.size != 1:
            raise ValueError("a patch class has exactly one (gamma, area) level")
        order = np.argsort(-vals, kind="stable")
        object.__setattr__(self, "values", tuple(float(x) for x in vals[order]))
        object.__setattr__(self, "areas", tuple(float(x) for x in areas[order]))
        if abs(self.support_area - geo.cap_area(self.epsilon)) > 1e-9 * max(1.0, self.support_area):
            raise ValueError("profile support area must equal the cap area of radius epsilon")
        if self.h3_norm > self.K * (1 + 1e-12):
            raise ValueError(f"concentration bound violated: {self.h3_norm:.6g} > K={self.K:.6g}")

    @classmethod
    def patch(cls, kappa, epsilon, p=2.0, K=None):
        """Uniform patch of total mass ``kappa`` on a cap of radius ``epsilon``."""
        if kappa <= 0:
            raise ValueError("patch mass must be positive")
        a = geo.cap_area(epsilon)
        if K is None:
            K = patch_concentration_constant(kappa, p)
        return cls("patch", (kappa / a,), (a,), p=p, epsilon=epsilon, K=K)

    @classmethod
    def sampled(cls, values, areas, p=2.0, K=None):
        """Finite profile; ``epsilon`` is inferred from the total support area."""
        areas = np.asarray(areas, dtype=float)
        eps = geo.cap_radius(float(np.sum(areas)))
        if K is None:
            K = np.inf
        return cls("sampled", tuple(values), tuple(areas), p=p, epsilon=eps, K=K)

    @property
    def kappa(self):
        return float(np.dot(self.values, self.areas))

    @property
    def gamma(self):
        return self.values[0]

    @property
    def support_area(self):
        return float(np.sum(self.areas))

    @property
    def h3_norm(self):
        """epsilon^(2/p') times the L^p norm of the profile."""
        p = self.p
        pprime = p / (p - 1.0)
        lp = float(np.sum(np.power(self.values, p) * np.asarray(self.areas))) ** (1.0 / p)
        return self.epsilon ** (2.0 / pprime) * lp

    def lp_norm(self):
        return float(np.sum(np.power(self.values, self.p) * np.asarray(self.areas))) ** (1.0 / self.p)


def patch_concentration_constant(kappa, p):
    """Smallest K that bounds every patch of mass kappa with radius in (0, pi/2].

    For a patch, eps^(2/p') ||rho||_p = kappa (eps^2 / |B_eps|)^(1/p'), and
    eps^2 / |B_eps| increases to pi/8 at eps = pi/2.
    """
    pprime = p / (p - 1.0)
    return kappa * (np.pi / 8.0) ** (1.0 / pprime)


# ----------------------------------------------------------------------------
# bathtub / monotone rearrangement
# ----------------------------------------------------------------------------


def descending_order(psi):
    """Node indices by decreasing ``psi``; ties broken by node index."""
    vals = psi.values if isinstance(psi, ScalarField) else np.asarray(psi)
    return np.lexsort((np.arange(vals.size), -vals))


def bathtub_level(psi, target_area):
    """Fill the superlevel set of ``psi`` to area ``target_area``.

    Returns ``(mu, indicator)``. Cells are taken in decreasing ``psi`` order;
    the last one receives the fraction that makes the total area exact, and
    ``mu`` is its ``psi`` value.
    """
    grid = psi.grid
    total = _sum(grid.weights)
    if not 0.0 < target_area <= total * (1 + 1e-14):
        raise ValueError(f"target area must lie in (0, {total}], got {target_area}")
    order = descending_order(psi)
    w = grid.weights[order]
    cum = np.cumsum(w)
    last = int(np.searchsorted(cum, target_area, side="left"))
    last = min(last, grid.size - 1)
    before = cum[last - 1] if last > 0 else 0.0
    frac = min(max((target_area - before) / w[last], 0.0), 1.0)
    ind = np.zeros(grid.size)
    ind[order[:last]] = 1.0
    ind[order[last]] = frac
    mu = float(psi.values[order[last]])
    return mu, ScalarField(grid, ind, nonnegative=True)


def monotone_rearrangement(profile, psi):
    """Place the profile levels on the cells of ``psi``, largest on largest.

    Each cell receives the area-average of the profile over the portion of the
    cumulative-area axis it covers, so the output is the monotone coupling of
    the profile with ``psi`` up to one straddling cell per level boundary.
    """
    grid = psi.grid
    vals = np.asarray(profile.values, dtype=float)
    areas = np.asarray(profile.areas, dtype=float)
    total = float(np.sum(grid.weights))
    if areas.sum() > total * (1 + 1e-14):
        raise ValueError("profile area exceeds the hemisphere area")
    order = descending_order(psi)
    w = grid.weights[order]
    cell_hi = np.cumsum(w)
    cell_lo = cell_hi - w
    level_hi = np.cumsum(areas)
    # mass of the profile on [0, s] as a piecewise-linear function of s
    knots = np.concatenate([[0.0], level_hi])
    cum_mass = np.concatenate([[0.0], np.cumsum(vals * areas)])

    def profile_mass(s):
        return np.interp(np.minimum(s, knots[-1]), knots, cum_mass)

    cell_mass = profile_mass(cell_hi) - profile_mass(cell_lo)
    dens = cell_mass / w
    # cells inside a single level get its value exactly (no rounding at ties)
    k_lo = np.searchsorted(knots, cell_lo, side="right") - 1
    k_hi = np.searchsorted(knots, cell_hi, side="left") - 1
    inside = (k_lo == k_hi) & (k_lo < len(vals))
    dens[inside] = vals[k_lo[inside]]
    dens[cell_lo >= knots[-1]] = 0.0
    out = np.zeros(grid.size)
    out[order] = dens
    return ScalarField(grid, out, nonnegative=True)


def class_field(cls, psi):
    """Linear maximizer over the class for the potential ``psi``."""
    if cls.kind == "patch":
        _, ind = bathtub_level(psi, cls.support_area)
        return ScalarField(psi.grid, cls.gamma * ind.values, nonnegative=True)
    return monotone_rearrangement(cls, psi)


def superlevel_measure(values, weights, levels):
    """Area of ``{values > s}`` for each ``s`` in ``levels``."""
    order = np.argsort(values, kind="stable")
    sv = values[order]
    tail = np.concatenate([np.cumsum(weights[order][::-1])[::-1], [0.0]])
    idx = np.searchsorted(sv, levels, side="right")
    return tail[idx]


def profile_superlevel_measure(cls, levels):
    vals = np.asarray(cls.values)
    areas = np.asarray(cls.areas)
    return np.array([areas[vals > s].sum() for s in np.atleast_1d(levels)])


def distribution_compare(u, v, tol, n_levels=N_LEVELS):
    """True if superlevel-set areas of ``u`` and ``v`` agree within ``tol``.

    Levels form a uniform mesh of ``n_levels`` values spanning both ranges.
    """
    _check_same_grid(u, v)
    lo = min(u.values.min(), v.values.min())
    hi = max(u.values.max(), v.values.max())
    levels = np.linspace(lo, hi, n_levels)
    w = u.grid.weights
    du = superlevel_measure(u.values, w, levels)
    dv = superlevel_measure(v.values, w, levels)
    return bool(np.all(np.abs(du - dv) <= tol))


def class_compare(u, cls, tol, n_levels=N_LEVELS):
    """Discrete membership test of ``u`` in the rearrangement class ``cls``.

    Zero is part of every profile on the part of the hemisphere outside its
    support, so only levels ``s >= 0`` are meaningful for nonnegative fields.
    """
    lo = min(u.values.min(), 0.0)
    hi = max(u.values.max(), max(cls.values))
    levels = np.linspace(lo, hi, n_levels)
    levels = levels[levels >= 0.0]
    du = superlevel_measure(u.values, u.grid.weights, levels)
    dc = profile_superlevel_measure(cls, levels)
    return bool(np.all(np.abs(du - dc) <= tol))


# ----------------------------------------------------------------------------
# weak residual
# ----------------------------------------------------------------------------


class Bump:
    """Smooth test function supported in the chord ball ``|x - c| < radius``."""

    def __init__(self, center, radius):
        self.center = geo.as_point(np.asarray(center, dtype=float))
        self.radius = float(radius)

    def _s(self, x):
        d = np.asarray(x) - self.center
        return np.einsum("...i,...i->...", d, d) / self.radius ** 2

    def __call__(self, x):
        s = self._s(x)
        out = np.zeros_like(s)
        m = s < 1.0
        out[m] = np.exp(1.0 - 1.0 / (1.0 - s[m]))
        return out

    def gradient(self, x):
        """Tangential gradient on the sphere, shape ``(..., 3)``."""
        x = np.asarray(x, dtype=float)
        s = self._s(x)
        val = self(x)
        dval_ds = np.zeros_like(s)
        m = s < 1.0
        dval_ds[m] = -val[m] / (1.0 - s[m]) ** 2
        # grad of |x - c|^2 restricted to the sphere is -2 (c - (c.x) x)
        cx = x @ self.center
        tang = self.center[None, :] - cx[..., None] * x if x.ndim > 1 else self.center - cx * x
        return (dval_ds / self.radius ** 2)[..., None] * (-2.0 * tang)


def _three_point(fm, f0, fp, hm, hp):
    """Derivative at the middle of three samples spaced ``hm`` below and ``hp`` above."""
    return (hm ** 2 * fp - hp ** 2 * fm - (hm ** 2 - hp ** 2) * f0) / (hm * hp * (hm + hp))


def grid_gradient(f):
    """Central-difference partials ``(d/dphi, d/dtheta)`` of a field.

    Longitude is periodic.  In latitude the node spacing is not uniform, so
    three-point stencils with the actual spacings are used.  Below the first
    band the field is continued by its zero equatorial boundary value; above
    the last band the neighbor across the pole (longitude + pi) is used, which
    needs an even ``n_phi``.
    """
    g = f.grid
    a = f.as_2d()
    d_phi = (np.roll(a, -1, axis=1) - np.roll(a, 1, axis=1)) / (2.0 * g.dphi)
    th = g.theta
    below = np.concatenate([[th[0]], np.diff(th)])
    f_below = np.concatenate([np.zeros((1, g.n_phi)), a[:-1]])
    if g.n_phi % 2:
        # no node across the pole: one-sided difference in the top band
        above = np.concatenate([np.diff(th), [np.inf]])
        f_above = np.concatenate([a[1:], a[-1:]])
    else:
        above = np.concatenate([np.diff(th), [np.pi - 2.0 * th[-1]]])
        f_above = np.concatenate([a[1:], np.roll(a[-1:], g.n_phi // 2, axis=1)])
    hm, hp = below[:, None], above[:, None]
    d_th = np.empty_like(a)
    fin = np.isfinite(above)
    d_th[fin] = _three_point(f_below[fin], a[fin], f_above[fin], hm[fin], hp[fin])
    if not np.all(fin):
        d_th[-1] = (a[-1] - f_below[-1]) / below[-1]
    return d_phi.ravel(), d_th.ravel()


def weak_residual(v, lam, xi, gp):
    """Weak-form residual of the rotating-solution equation for test function ``xi``.

    Evaluates sum_i v_i (J grad psi . grad xi)_i w_i with psi = G+ v - lam x3,
    where J rotates tangent vectors clockwise by a right angle.
    """
    if not np.any(v.values):
        return 0.0
    g = v.grid
    psi = gp.apply(v).values - lam * g.x3
    d_phi, d_th = grid_gradient(ScalarField(g, psi))
    east, north = geo.tangent_basis(g.nodes)
    grad_xi = xi.gradient(g.nodes)
    xi_e = np.einsum("ij,ij->i", grad_xi, east)
    xi_n = np.einsum("ij,ij->i", grad_xi, north)
    cos_t = np.cos(g.node_theta)
    integrand = d_th * xi_e - d_phi / cos_t * xi_n
    return _sum(v.values * integrand * g.weights)


def bump_battery(center, scale, n=10):
    """``n`` bumps of radius ~``2 scale`` arranged around ``center``.

    One bump is offset from the center along each of ``n`` directions spread
    over the tangent plane, so every bump varies across a core of size
    ``scale`` placed at ``center``.
    """
    center = geo.normalize(center)
    phi, theta = geo.to_spherical(center)
    e, nvec = geo.tangent_basis(center)
    out = []
    for k in range(n):
        ang = 2 * np.pi * k / n
        off = (0.5 + 0.5 * (k % 2)) * scale
        c = geo.normalize(center + off * (np.cos(ang) * e + np.sin(ang) * nvec))
        out.append(Bump(c, (2.0 + 0.25 * (k % 3)) * scale))
    return out


# ----------------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------------

FIELD_FORMAT_VERSION = 1


def write_field_csv(v, path, header=None):
    """Write ``phi,theta,weight,value`` rows preceded by ``#`` header lines."""
    g = v.grid
    lines = [
        f"# format=spherevortex-field version={FIELD_FORMAT_VERSION}",
        f"# n_phi={g.n_phi} n_theta={g.n_theta}",
    ]
    for line in header or ():
        lines.append(f"# {line}")
    lines.append("phi,theta,weight,value")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
        for k in range(g.size):
            fh.write(f"{float(g.node_phi[k])!r},{float(g.node_theta[k])!r},"
                     f"{float(g.weights[k])!r},{float(v.values[k])!r}\n")


def read_field_csv(path):
    dims = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("# n_phi="):
                for tok in line[1:].split():
                    if tok.startswith(("n_phi=", "n_theta=")):
                        k, val = tok.split("=")
                        dims[k] = int(val)
                continue
            if line.startswith("#"):
                continue
            if line.startswith("phi"):
                continue
            rows.append(float(line.rsplit(",", 1)[1]))
    if "n_phi" not in dims or "n_theta" not in dims:
        raise ValueError(f"{path}: missing n_phi/n_theta header")
    grid = HemisphereGrid(dims["n_phi"], dims["n_theta"])
    return ScalarField(grid, np.array(rows))
