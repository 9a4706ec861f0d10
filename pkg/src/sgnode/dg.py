"""Nodal discontinuous Galerkin discretization on a periodic 1-D mesh.

Lagrange basis on Legendre-Gauss-Lobatto points, integrals by Gauss
quadrature with 2(p+1) points, central fluxes for the diffusion pair and
Lax-Friedrichs for convection.  The diffusion gradient variable is
eliminated inside each tendency evaluation.

The tendency is written against the autodiff dispatch helpers so the same
code serves plain integration (numpy) and taped training rollouts; batched
states carry shape (..., n_elem, p+1) internally and flatten to
(..., n_elem*(p+1)) at the solver interface.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre as npleg

from . import autodiff as ad
from .ode import Rhs

CONVECTION_DIFFUSION = "convection_diffusion"
VISCOUS_BURGERS = "viscous_burgers"

CD_MODES = (20, 4, 6, 7)  # wavenumbers of the multi-mode initial signal


@dataclass(frozen=True)
class PdeConfig:
    kind: str
    kappa: float
    a: float = 0.0  # convection velocity; used by convection_diffusion only

    def __post_init__(self):
        if self.kind not in (CONVECTION_DIFFUSION, VISCOUS_BURGERS):
            raise ValueError(f"unknown PDE kind {self.kind!r}")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")


def lgl_nodes(p):
    """p+1 Legendre-Gauss-Lobatto points on [-1, 1], symmetric about 0."""
    if p < 1:
        raise ValueError("order must be >= 1")
    if p == 1:
        return np.array([-1.0, 1.0])
    coeffs = np.zeros(p + 1)
    coeffs[p] = 1.0
    interior = np.sort(npleg.legroots(npleg.legder(coeffs)).real)
    nodes = np.concatenate([[-1.0], interior, [1.0]])
    return 0.5 * (nodes - nodes[::-1])


def _legendre_vandermonde(x, deg):
    return npleg.legvander(np.asarray(x, dtype=np.float64), deg)


def _legendre_deriv_vandermonde(x, deg):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros((x.size, deg + 1))
    for j in range(1, deg + 1):
        cj = np.zeros(j + 1)
        cj[j] = 1.0
        out[:, j] = npleg.legval(x, npleg.legder(cj))
    return out


class Mesh1D:
    """Uniform periodic mesh with per-order reference operators."""

    def __init__(self, n_elem, order, domain=(0.0, 1.0)):
        if n_elem < 2:
            raise ValueError("need at least two elements for periodic faces")
        self.n_elem = int(n_elem)
        self.order = int(order)
        self.domain = (float(domain[0]), float(domain[1]))
        self.h = (self.domain[1] - self.domain[0]) / self.n_elem
        self.jac = self.h / 2.0

        p = self.order
        self.nodes = lgl_nodes(p)
        self.quad_x, self.quad_w = npleg.leggauss(2 * (p + 1))
        self._vinv = np.linalg.inv(_legendre_vandermonde(self.nodes, p))
        # nodal -> quadrature interpolation and reference-derivative operators
        self.vq = _legendre_vandermonde(self.quad_x, p) @ self._vinv
        self.vdq = _legendre_deriv_vandermonde(self.quad_x, p) @ self._vinv
        wvq = self.quad_w[:, None] * self.vq
        self.mass = self.jac * (self.vq.T @ wvq)
        self.kmat = self.vq.T @ (self.quad_w[:, None] * self.vdq)
        self.minv = np.linalg.inv(self.mass)
        # lift rows: nodal basis hits the endpoints exactly (LGL includes them)
        n = p + 1
        self.e_left = np.eye(n)[0:1]
        self.e_right = np.eye(n)[n - 1:n]
        self._proj = {}
        self._interp = {}

    @property
    def n_dof(self):
        return self.n_elem * (self.order + 1)

    def node_coords(self):
        """Physical coordinates of every nodal point, shape (n_elem, p+1)."""
        left = self.domain[0] + self.h * np.arange(self.n_elem)
        return left[:, None] + self.jac * (self.nodes[None, :] + 1.0)

    def basis_at(self, r):
        """Nodal basis values at reference points r, shape (len(r), p+1)."""
        return _legendre_vandermonde(r, self.order) @ self._vinv

    def min_node_spacing(self):
        """Smallest physical distance between LGL points (Courant length)."""
        return float(np.min(np.diff(self.nodes))) * self.jac

    def projection_to(self, target_order):
        """Elementwise L2-projection matrix onto order `target_order` nodes."""
        L = int(target_order)
        if L >= self.order:
            raise ValueError(
                f"projection target order {L} must be below source order {self.order}"
            )
        if L not in self._proj:
            pl_quad = _legendre_vandermonde(self.quad_x, L)  # (nq, L+1)
            scale = (2.0 * np.arange(L + 1) + 1.0) / 2.0
            modal = scale[:, None] * (pl_quad.T @ (self.quad_w[:, None] * self.vq))
            self._proj[L] = _legendre_vandermonde(lgl_nodes(L), L) @ modal
        return self._proj[L]

    def interpolation_from(self, source_order):
        """Nodal embedding matrix from a lower order onto this mesh's nodes."""
        Lo = int(source_order)
        if Lo > self.order:
            raise ValueError("interpolation source order exceeds target order")
        if Lo not in self._interp:
            vin = np.linalg.inv(_legendre_vandermonde(lgl_nodes(Lo), Lo))
            self._interp[Lo] = _legendre_vandermonde(self.nodes, Lo) @ vin
        return self._interp[Lo]


@functools.lru_cache(maxsize=None)
def make_mesh(n_elem, order, x_left=0.0, x_right=1.0):
    return Mesh1D(n_elem, order, (x_left, x_right))


@dataclass
class DGField:
    """Nodal coefficients of a piecewise polynomial, shape (n_elem, p+1)."""

    mesh: Mesh1D
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        expected = (self.mesh.n_elem, self.mesh.order + 1)
        if self.coeffs.shape != expected:
            raise ValueError(f"coefficients {self.coeffs.shape} != mesh layout {expected}")

    @property
    def flat(self):
        return self.coeffs.reshape(-1)

    def copy(self):
        return DGField(self.mesh, self.coeffs.copy())


def field_from_flat(mesh, flat):
    return DGField(mesh, np.asarray(flat).reshape(mesh.n_elem, mesh.order + 1))


def field_from_function(mesh, fn):
    """Nodal interpolation of a callable of x."""
    return DGField(mesh, fn(mesh.node_coords()))


def _tendency(cfg, mesh, u):
    """Semi-discrete RHS on element-shaped states u (..., n_elem, p+1)."""
    n = mesh.order + 1
    kT = mesh.kmat.T
    minvT = mesh.minv.T
    # interface traces: face i sits between element i-1 (minus side) and i (plus side)
    u_r = ad.narrow(u, -1, n - 1, 1)            # (..., E, 1) right-endpoint trace
    u_l = ad.narrow(u, -1, 0, 1)                # left-endpoint trace
    um = ad.roll(u_r, 1, -2)                    # minus-side value at face i
    up = u_l                                    # plus-side value at face i

    # diffusion auxiliary q ~ -kappa u_x with central interface values.
    # Volume terms see per-element-centred data (the stiffness operator
    # annihilates constants analytically); this keeps constant states exact
    # steady states instead of leaving ~1e-12 roundoff residue.
    uc = u - u_l
    ustar = 0.5 * (um + up)
    ustar_right = ad.roll(ustar, -1, -2)        # value at each element's right face
    rq = -(uc @ kT) + (u_r - ustar_right) @ mesh.e_right - (u_l - ustar) @ mesh.e_left
    q = cfg.kappa * (rq @ minvT)
    q_r = ad.narrow(q, -1, n - 1, 1)
    q_l = ad.narrow(q, -1, 0, 1)
    qstar = 0.5 * (ad.roll(q_r, 1, -2) + q_l)

    # convective interface flux: Lax-Friedrichs
    if cfg.kind == CONVECTION_DIFFUSION:
        fstar = 0.5 * cfg.a * (um + up) + 0.5 * abs(cfg.a) * (um - up)
        flux = cfg.a * u + q
    else:
        tau = ad.maximum(ad.absolute(um), ad.absolute(up))
        fstar = 0.25 * (ad.square(um) + ad.square(up)) + 0.5 * tau * (um - up)
        flux = 0.5 * ad.square(u) + q

    face_flux = fstar + qstar                   # total numerical flux per face
    f_r = ad.narrow(flux, -1, n - 1, 1)
    f_l = ad.narrow(flux, -1, 0, 1)
    ru = (
        -((flux - f_l) @ kT)
        + (f_r - ad.roll(face_flux, -1, -2)) @ mesh.e_right
        - (f_l - face_flux) @ mesh.e_left
    )
    return ru @ minvT


def rhs_semidiscrete(cfg, mesh):
    """Flat-vector RHS suitable for the ERK stepper; batch-shape agnostic."""
    E, n = mesh.n_elem, mesh.order + 1

    def fn(t, u):
        shape = u.shape
        uu = ad.reshape(u, shape[:-1] + (E, n))
        du = _tendency(cfg, mesh, uu)
        return ad.reshape(du, shape)

    return Rhs(fn, E * n)


def filter_project(field, target_order):
    """Elementwise L2 projection onto the lower-order space (the filter)."""
    g = field.mesh.projection_to(target_order)
    low_mesh = make_mesh(field.mesh.n_elem, target_order, *field.mesh.domain)
    return DGField(low_mesh, field.coeffs @ g.T)


def project_states(mesh, states, target_order):
    """Apply the filter to a whole (n_times, n_dof) state block at once."""
    E, n = mesh.n_elem, mesh.order + 1
    g = mesh.projection_to(target_order)
    block = states.reshape(states.shape[0], E, n) @ g.T
    return block.reshape(states.shape[0], -1)


def interp_to_order(field, target_order):
    """Embed a field into a higher-order space by nodal interpolation (exact)."""
    hi_mesh = make_mesh(field.mesh.n_elem, target_order, *field.mesh.domain)
    e = hi_mesh.interpolation_from(field.mesh.order)
    return DGField(hi_mesh, field.coeffs @ e.T)


def dg_norm(field):
    """Broken L2 norm via the mesh quadrature."""
    uq = field.coeffs @ field.mesh.vq.T
    return float(np.sqrt(field.mesh.jac * np.sum(field.mesh.quad_w * uq * uq)))


def dg_error(field_a, field_b):
    if field_a.mesh is not field_b.mesh and (
        field_a.mesh.n_elem != field_b.mesh.n_elem
        or field_a.mesh.order != field_b.mesh.order
        or field_a.mesh.domain != field_b.mesh.domain
    ):
        raise ValueError("fields live on different meshes")
    return dg_norm(DGField(field_a.mesh, field_a.coeffs - field_b.coeffs))


def states_dg_norm(mesh, states):
    """Broken L2 norm of each row of a (n_times, n_dof) block."""
    E, n = mesh.n_elem, mesh.order + 1
    uq = states.reshape(states.shape[0], E, n) @ mesh.vq.T
    return np.sqrt(mesh.jac * np.sum(mesh.quad_w * uq * uq, axis=(1, 2)))


def dg_integral(field):
    uq = field.coeffs @ field.mesh.vq.T
    return float(field.mesh.jac * np.sum(field.mesh.quad_w * uq))


def cd_initial_condition(mesh, phase):
    """Sum of four unit sine modes, shifted by the given phase."""
    return field_from_function(
        mesh,
        lambda x: sum(np.sin(2.0 * np.pi * k * (x - phase)) for k in CD_MODES),
    )


def target_spectrum(k, k0):
    """Energy density peaked at k0: E(k) = A0 k^4 exp(-2 (k/k0)^2)."""
    a0 = 2.0 * k0 ** -5 / (3.0 * np.sqrt(np.pi))
    k = np.asarray(k, dtype=np.float64)
    return a0 * k ** 4 * np.exp(-2.0 * (k / k0) ** 2)


def synthesize_turbulence_signal(k0, n_grid, seed):
    """Random-phase real signal on n_grid uniform points realizing the target
    spectrum exactly per wavenumber (Hermitian coefficient pairs)."""
    if n_grid < 4 or n_grid & (n_grid - 1):
        raise ValueError("n_grid must be a power of two >= 4")
    rng = np.random.Generator(np.random.PCG64(seed))
    coeffs = np.zeros(n_grid, dtype=np.complex128)
    ks = np.arange(1, n_grid // 2)
    amps = n_grid * np.sqrt(2.0 * target_spectrum(ks, k0))
    phases = np.exp(2j * np.pi * rng.uniform(0.0, 1.0, size=ks.size))
    coeffs[1:n_grid // 2] = amps * phases
    coeffs[n_grid // 2 + 1:] = np.conj(coeffs[1:n_grid // 2])[::-1]
    u = np.fft.ifft(coeffs)
    return u.real.copy(), coeffs


def _barycentric_interp(x_grid_spacing, u_grid, x_query, x0, window=8):
    """Local barycentric Lagrange interpolation off a fine periodic grid."""
    n = u_grid.size
    half = window // 2
    # equispaced barycentric weights: (-1)^j * C(window-1, j)
    w = np.array([(-1) ** j * math.comb(window - 1, j) for j in range(window)], float)
    ratio = (x_query - x0) / x_grid_spacing
    base = np.floor(ratio).astype(int)
    offsets = np.arange(-half + 1, half + 1)
    idx = (base[:, None] + offsets[None, :]) % n
    xrel = ratio[:, None] - (base[:, None] + offsets[None, :])
    exact = np.isclose(xrel, 0.0, atol=1e-13)
    xrel_safe = np.where(exact, 1.0, xrel)
    terms = w[None, :] / xrel_safe
    vals = (terms * u_grid[idx]).sum(axis=1) / terms.sum(axis=1)
    hit = exact.any(axis=1)
    if np.any(hit):
        vals[hit] = u_grid[idx[hit]][exact[hit]]
    return vals


def burgulence_initial_condition(mesh, k0, n_grid, seed):
    """Turbulent initial velocity: spectral synthesis on a fine uniform grid,
    then interpolation onto the mesh's LGL nodes."""
    u_grid, _ = synthesize_turbulence_signal(k0, n_grid, seed)
    x0, x1 = mesh.domain
    spacing = (x1 - x0) / n_grid
    xq = mesh.node_coords().reshape(-1)
    vals = _barycentric_interp(spacing, u_grid, xq, x0)
    return DGField(mesh, vals.reshape(mesh.n_elem, mesh.order + 1))


def eval_uniform(field, n_pts):
    """Sample the piecewise polynomial at n_pts uniform points (left-closed)."""
    mesh = field.mesh
    x0, x1 = mesh.domain
    E = mesh.n_elem
    if n_pts % E == 0:
        m = n_pts // E
        r = -1.0 + 2.0 * (np.arange(m) / m)
        b = mesh.basis_at(r)
        return (field.coeffs @ b.T).reshape(-1)
    xs = x0 + (x1 - x0) * np.arange(n_pts) / n_pts
    e = np.minimum(((xs - x0) / mesh.h).astype(int), E - 1)
    r = 2.0 * (xs - (x0 + e * mesh.h)) / mesh.h - 1.0
    out = np.empty(n_pts)
    for el in range(E):
        mask = e == el
        if np.any(mask):
            out[mask] = mesh.basis_at(r[mask]) @ field.coeffs[el]
    return out


def courant_numbers(cfg, mesh, dt, velocity=None):
    """(convective Courant number, diffusion number) at the min LGL spacing."""
    dx = mesh.min_node_spacing()
    v = abs(cfg.a) if velocity is None else abs(velocity)
    return v * dt / dx, cfg.kappa * dt / dx ** 2
