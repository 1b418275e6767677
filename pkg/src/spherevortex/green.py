"""Green kernels of the sphere and hemisphere and the discrete operator G+.

The discrete operator on a :class:`~spherevortex.field.HemisphereGrid` is the
matrix ``K[a, b] = G+(x_a, x_b) w_b`` with a corrected diagonal.  On a regular
longitude-latitude grid ``K`` only depends on the two latitude bands and the
longitude offset, so it is stored as ``blocks[j, jp, m]`` (target band ``j``,
source band ``jp``, offset ``m`` cells) and applied with an FFT along
longitude.  This is the dense matrix in block-circulant form, not an
approximation of it; :meth:`GreenOperator.dense` materializes it.

Entries are assembled on an ``r``-times refined grid and averaged back over
sub-cells (see :func:`default_subdivision`).  On the refined grid the
self-cell term integrates the source part ``-(1/2pi) ln|x - y|`` in closed form
over the geodesic disk with the cell's area ``w``: with chord radius ``s``
(``s^2 = w / pi``) this is ``-(s^2/2)(ln s - 1/2)``.  The smooth image part is
added pointwise.
"""

import hashlib
import os
import struct

import numpy as np

from . import geometry as geo
from .field import HemisphereGrid, ScalarField

KERNEL_VERSION = 2
CACHE_ENV = "SPHEREVORTEX_KERNEL_CACHE"
_MAGIC = b"SVGREEN\0"


class SingularityError(ValueError):
    """Kernel evaluated at (or numerically indistinguishable from) a singular pair."""


def kernel_sphere(x, y):
    """Green function of -Laplacian on the sphere, -(1/2pi) ln|x - y|."""
    c = geo.chord(x, y)
    if np.any(c <= 0.0):
        raise SingularityError("kernel_sphere evaluated at coincident points")
    return -np.log(c) / (2.0 * np.pi)


def kernel_hemisphere(x, y):
    """Dirichlet Green function of the northern hemisphere.

    (1/2pi) ln(|x - y'| / |x - y|) with ``y'`` the equatorial mirror of ``y``.
    """
    c = geo.chord(x, y)
    if np.any(c <= 0.0):
        raise SingularityError("kernel_hemisphere evaluated at coincident points")
    ci = geo.chord(x, geo.reflect_equator(y))
    return np.log(ci / c) / (2.0 * np.pi)


def velocity_kernel(x, y, delta=0.0):
    """Velocity at ``x`` induced by a unit vortex at ``y`` and its mirror image.

    (1/2pi) [ (y x x)/(|x-y|^2 + delta^2) - (y' x x)/|x-y'|^2 ].  With
    ``delta > 0`` only the source term is regularized.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    yi = geo.reflect_equator(y)
    d2 = np.sum((x - y) ** 2, axis=-1) + delta ** 2
    di2 = np.sum((x - yi) ** 2, axis=-1)
    if np.any(d2 <= 0.0) or np.any(di2 <= 0.0):
        raise SingularityError("velocity_kernel evaluated at a singular pair")
    src = np.cross(y, x) / d2[..., None]
    img = np.cross(yi, x) / di2[..., None]
    return (src - img) / (2.0 * np.pi)


def self_cell_integral(w):
    """Integral of -(1/2pi) ln|x - y| over a geodesic disk of area ``w`` about x."""
    s2 = np.asarray(w, dtype=float) / np.pi
    return -(s2 / 4.0) * (np.log(s2) - 1.0)


def default_subdivision(grid):
    """Sub-cell refinement used for kernel assembly on ``grid``.

    Plain one-point collocation is not positive definite: thin polar cells see
    their longitude neighbors at distance ``cos(theta) dphi << dtheta`` and the
    alternating (Nyquist) mode goes negative.  Averaging over 3x3 sub-cells
    cures this for ``n_phi <= 256``; wider grids need 4x4.
    """
    return 3 if grid.n_phi <= 256 else 4


def _fine_rows(fine, A):
    """Collocated weighted kernel from fine band ``A`` (column 0) to every fine cell."""
    th = fine.theta
    ct = np.cos(th)
    s2 = np.sin(0.5 * np.arange(fine.n_phi) * fine.dphi) ** 2
    cc = 4.0 * ct[A] * ct[:, None] * s2[None, :]
    src2 = 4.0 * np.sin(0.5 * (th[A] - th))[:, None] ** 2 + cc
    img2 = 4.0 * np.sin(0.5 * (th[A] + th))[:, None] ** 2 + cc
    src2[A, 0] = 1.0  # self cell, replaced below
    rows = np.log(img2 / src2) / (4.0 * np.pi) * fine.band_weights[:, None]
    w = fine.band_weights[A]
    rows[A, 0] = self_cell_integral(w) + w * np.log(2.0 * np.sin(th[A])) / (2.0 * np.pi)
    return rows


def _band_blocks(grid, subdivision=None):
    """Assemble ``blocks[j, jp, m]`` by averaging a collocated kernel over sub-cells.

    Each cell is split into ``r x r`` sub-cells; the entry for a cell pair is
    the target-area-weighted mean over target sub-cells of the collocated
    kernel summed over source sub-cells.  The result is symmetric in the
    weighted sense and is exactly the plain collocation matrix for ``r = 1``.
    """
    r = default_subdivision(grid) if subdivision is None else int(subdivision)
    if r < 1:
        raise ValueError("subdivision must be >= 1")
    nt, nphi = grid.n_theta, grid.n_phi
    fine = HemisphereGrid(nphi * r, nt * r)
    blocks = np.zeros((nt, nt, nphi))
    for A in range(fine.n_theta):
        rows = _fine_rows(fine, A).reshape(nt, r, nphi * r).sum(axis=1)
        # sum over target columns b and source columns d of row[m r + d - b]
        acc = np.zeros((nt, nphi))
        for e in range(-(r - 1), r):
            acc += (r - abs(e)) * np.roll(rows, -e, axis=1)[:, ::r]
        blocks[A // r] += fine.band_weights[A] * acc
    return blocks / grid.band_weights[:, None, None]


class GreenOperator:
    """Discrete hemisphere Green operator bound to one grid."""

    def __init__(self, grid, blocks=None, subdivision=None):
        if not isinstance(grid, HemisphereGrid):
            raise TypeError("GreenOperator needs a HemisphereGrid")
        self.grid = grid
        if blocks is None:
            blocks = _band_blocks(grid, subdivision)
        blocks = np.asarray(blocks, dtype=float)
        if blocks.shape != (grid.n_theta, grid.n_theta, grid.n_phi):
            raise ValueError(f"block array has shape {blocks.shape}, expected "
                             f"{(grid.n_theta, grid.n_theta, grid.n_phi)}")
        self.blocks = blocks
        self.blocks.flags.writeable = False
        # blocks are even in the offset, so their transforms are real;
        # laid out (frequency, target band, source band) for batched products
        self._spec = np.ascontiguousarray(np.fft.rfft(blocks, axis=2).real.transpose(2, 0, 1))

    @classmethod
    def build(cls, grid, cache_dir=None):
        """Assemble, or load from ``cache_dir`` (default: ``$SPHEREVORTEX_KERNEL_CACHE``)."""
        cache_dir = cache_dir or os.environ.get(CACHE_ENV)
        if cache_dir:
            path = cache_path(cache_dir, grid)
            if os.path.exists(path):
                return cls(grid, load_blocks(path, grid))
            op = cls(grid)
            os.makedirs(cache_dir, exist_ok=True)
            save_blocks(path, op)
            return op
        return cls(grid)

    def apply(self, v):
        """Return the field G+ v."""
        if isinstance(v, ScalarField):
            if v.grid != self.grid:
                raise ValueError(f"grid mismatch: operator on {self.grid}, field on {v.grid}")
            vals = v.values
        else:
            vals = np.asarray(v, dtype=float)
            if vals.shape != (self.grid.size,):
                raise ValueError("value array does not match the operator grid")
        return ScalarField(self.grid, self.apply_values(vals))

    def apply_values(self, vals):
        g = self.grid
        vhat = np.fft.rfft(vals.reshape(g.shape), axis=1)  # (band, freq)
        vt = vhat.T[:, :, None]  # (freq, band, 1)
        out_re = np.matmul(self._spec, vt.real)[:, :, 0]
        out_im = np.matmul(self._spec, vt.imag)[:, :, 0]
        out = np.fft.irfft((out_re + 1j * out_im).T, n=g.n_phi, axis=1)
        return out.ravel()

    def dense(self):
        """Materialize the full ``(n, n)`` weighted kernel matrix (small grids only)."""
        g = self.grid
        n = g.size
        if n > 20000:
            raise MemoryError("dense kernel requested for a grid with more than 2e4 nodes")
        K = np.empty((n, n))
        i = np.arange(g.n_phi)
        offs = (i[None, :] - i[:, None]) % g.n_phi  # offs[target col, source col]
        for j in range(g.n_theta):
            rows = slice(j * g.n_phi, (j + 1) * g.n_phi)
            K[rows] = self.blocks[j][:, offs].transpose(1, 0, 2).reshape(g.n_phi, n)
        return K

    def stream_function(self, v, lam):
        return stream_function(v, lam, self)

    def mode_spectrum(self):
        """Eigenvalues of the weighted quadratic form, per longitude wavenumber.

        Returns an array ``(n_phi // 2 + 1, n_theta)``; the form
        ``sum_a u_a w_a (G+ u)_a`` is positive definite iff all are > 0.
        """
        w = self.grid.band_weights
        sw = np.sqrt(w)
        out = []
        for spec in self._spec:
            m = w[:, None] * spec
            m = 0.5 * (m + m.T) / (sw[:, None] * sw[None, :])
            out.append(np.linalg.eigvalsh(m))
        return np.array(out)


def build_operator(grid, cache_dir=None):
    return GreenOperator.build(grid, cache_dir)


def apply(gp, v):
    return gp.apply(v)


def stream_function(v, lam, gp):
    """psi = G+ v - lam * x3."""
    psi = gp.apply(v)
    return ScalarField(v.grid, psi.values - lam * v.grid.x3)


# ----------------------------------------------------------------------------
# on-disk cache: magic(8) | version u32 | n_phi u32 | n_theta u32 | sha256(32)
#                | blocks as little-endian float64, row-major (j, jp, m)
# ----------------------------------------------------------------------------


def cache_path(cache_dir, grid):
    return os.path.join(cache_dir, f"green_v{KERNEL_VERSION}_{grid.n_phi}x{grid.n_theta}.bin")


def save_blocks(path, op):
    payload = np.ascontiguousarray(op.blocks, dtype="<f8").tobytes()
    head = _MAGIC + struct.pack("<III", KERNEL_VERSION, op.grid.n_phi, op.grid.n_theta)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(head + hashlib.sha256(payload).digest() + payload)
    os.replace(tmp, path)


def load_blocks(path, grid):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path}: not a kernel cache file")
    version, n_phi, n_theta = struct.unpack("<III", data[8:20])
    if (version, n_phi, n_theta) != (KERNEL_VERSION, grid.n_phi, grid.n_theta):
        raise ValueError(f"{path}: cache is for version {version} grid {n_phi}x{n_theta}")
    digest, payload = data[20:52], data[52:]
    if hashlib.sha256(payload).digest() != digest:
        raise ValueError(f"{path}: checksum mismatch")
    return np.frombuffer(payload, dtype="<f8").reshape(n_theta, n_theta, n_phi).copy()
