"""Perturbation-form shallow water physics and the well-balanced Roe flux.

States are arrays whose last axis holds ``(xi, uh, vh)`` where ``xi = h - h_s``
is the free-surface perturbation about a reference water level.  All functions
broadcast over leading axes and are written with ``jax.numpy`` so the same code
serves the forward solver and the differentiable training loss.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import jax.numpy as jnp
import numpy as np

from .autodiff import fabs, fmax, safe_sqrt
from .mesh import EXIT, INLET, WALL, Mesh, bed_gradient

KIND_CODES = {WALL: 0, INLET: 1, EXIT: 2}


@dataclass(frozen=True)
class PhysParams:
    g: float = 9.81
    rho: float = 1000.0
    manning_n: tuple = (0.0,)
    h_min: float = 1e-6

    def __post_init__(self):
        if not (self.g > 0 and self.rho > 0 and self.h_min > 0):
            raise ValueError("g, rho and h_min must be positive")
        if isinstance(self.manning_n, (int, float)):
            object.__setattr__(self, "manning_n", (float(self.manning_n),))
        if any(n < 0 for n in self.manning_n):
            raise ValueError("Manning coefficients must be non-negative")


def recover_primitives(q, h_s, params: PhysParams):
    """Depth and velocities ``(h, u, v)`` with the depth floored at ``h_min``."""
    q = jnp.asarray(q)
    h_raw = q[..., 0] + h_s
    h = fmax(h_raw, params.h_min)
    wet = h_raw > params.h_min
    u = jnp.where(wet, q[..., 1] / h, 0.0)
    v = jnp.where(wet, q[..., 2] / h, 0.0)
    return h, u, v


def pressure(xi, h_s, g):
    return 0.5 * g * (xi * xi + 2.0 * xi * h_s)


def normal_flux(q, h_s_face, normal, params: PhysParams):
    """Face-normal physical flux ``F nx + G ny`` of the perturbation-form system."""
    q = jnp.asarray(q)
    normal = jnp.asarray(normal)
    nx, ny = normal[..., 0], normal[..., 1]
    h, u, v = recover_primitives(q, h_s_face, params)
    un = u * nx + v * ny
    p = pressure(q[..., 0], h_s_face, params.g)
    return jnp.stack([h * un, un * q[..., 1] + p * nx, un * q[..., 2] + p * ny], axis=-1)


def _entropy_fixed_abs(lam, eps):
    pos = eps > 0
    safe = jnp.where(pos, eps, 1.0)
    smooth = 0.5 * (lam * lam / safe + safe)
    return jnp.where(pos & (fabs(lam) < eps), smooth, fabs(lam))


@dataclass
class RoeDecomposition:
    lam: jnp.ndarray  # (..., 3) eigenvalues, ascending
    abs_lam: jnp.ndarray  # entropy-fixed |lambda|
    alpha: jnp.ndarray  # (..., 3) wave strengths
    un: jnp.ndarray
    ut: jnp.ndarray
    c: jnp.ndarray


def roe_decomposition(q_l, q_r, h_s_face, normal, params: PhysParams) -> RoeDecomposition:
    """Roe averages, wave strengths and entropy-fixed speeds in the face frame."""
    q_l, q_r, normal = jnp.asarray(q_l), jnp.asarray(q_r), jnp.asarray(normal)
    nx, ny = normal[..., 0], normal[..., 1]
    g = params.g
    hl, ul, vl = recover_primitives(q_l, h_s_face, params)
    hr, ur, vr = recover_primitives(q_r, h_s_face, params)
    unl, utl = ul * nx + vl * ny, -ul * ny + vl * nx
    unr, utr = ur * nx + vr * ny, -ur * ny + vr * nx
    sl, sr = jnp.sqrt(hl), jnp.sqrt(hr)
    un = (sl * unl + sr * unr) / (sl + sr)
    ut = (sl * utl + sr * utr) / (sl + sr)
    c = jnp.sqrt(0.5 * g * (hl + hr))

    d1 = q_r[..., 0] - q_l[..., 0]
    d2 = hr * unr - hl * unl
    d3 = hr * utr - hl * utl
    a1 = ((un + c) * d1 - d2) / (2.0 * c)
    a2 = d3 - ut * d1
    a3 = (d2 - (un - c) * d1) / (2.0 * c)

    lam1, lam2, lam3 = un - c, un, un + c
    cl, cr = jnp.sqrt(g * hl), jnp.sqrt(g * hr)
    eps1 = fmax(fmax(jnp.zeros_like(lam1), lam1 - (unl - cl)), (unr - cr) - lam1)
    eps3 = fmax(fmax(jnp.zeros_like(lam3), lam3 - (unl + cl)), (unr + cr) - lam3)
    abs_lam = jnp.stack([_entropy_fixed_abs(lam1, eps1), fabs(lam2), _entropy_fixed_abs(lam3, eps3)], axis=-1)
    return RoeDecomposition(
        lam=jnp.stack([lam1, lam2, lam3], axis=-1),
        abs_lam=abs_lam,
        alpha=jnp.stack([a1, a2, a3], axis=-1),
        un=un,
        ut=ut,
        c=c,
    )


def roe_flux(q_l, q_r, h_s_face, normal, params: PhysParams):
    """Well-balanced Roe flux through a face with unit normal pointing from L to R."""
    q_l, q_r, normal = jnp.asarray(q_l), jnp.asarray(q_r), jnp.asarray(normal)
    nx, ny = normal[..., 0], normal[..., 1]
    rd = roe_decomposition(q_l, q_r, h_s_face, normal, params)
    w = rd.abs_lam * rd.alpha
    w1, w2, w3 = w[..., 0], w[..., 1], w[..., 2]
    d_mass = w1 + w3
    d_n = w1 * (rd.un - rd.c) + w3 * (rd.un + rd.c)
    d_t = (w1 + w3) * rd.ut + w2
    diss = jnp.stack([d_mass, nx * d_n - ny * d_t, ny * d_n + nx * d_t], axis=-1)
    central = normal_flux(q_l, h_s_face, normal, params) + normal_flux(q_r, h_s_face, normal, params)
    return 0.5 * central - 0.5 * diss


def friction(q, h_s, manning_n, params: PhysParams):
    """Bed shear stress over density, ``(tau_bx, tau_by) / rho``."""
    h, u, v = recover_primitives(q, h_s, params)
    speed = safe_sqrt(u * u + v * v)
    k = params.g * manning_n**2 / jnp.cbrt(h) * speed
    return jnp.stack([k * u, k * v], axis=-1)


def source_term(q, h_s, bed_slope, manning_n, params: PhysParams):
    """Cell source ``(0, -tau_x/rho + g xi S0x, -tau_y/rho + g xi S0y)``.

    ``bed_slope`` is ``S0 = -grad(z_b)`` from the Green-Gauss face sum.
    """
    q = jnp.asarray(q)
    tau = friction(q, h_s, manning_n, params)
    xi = q[..., 0]
    gx = params.g * xi * bed_slope[..., 0]
    gy = params.g * xi * bed_slope[..., 1]
    return jnp.stack([jnp.zeros_like(xi), -tau[..., 0] + gx, -tau[..., 1] + gy], axis=-1)


def ghost_state(q_in, kind, value, normal, params: PhysParams | None = None):
    """Exterior state for a boundary face.

    ``kind`` is a patch kind string or its integer code (broadcastable array).
    ``value`` is the inflow discharge per unit width for inlets (positive into
    the domain) and the target perturbation ``w_s - reference_ws`` for exits.
    """
    q_in, normal = jnp.asarray(q_in), jnp.asarray(normal)
    if isinstance(kind, str):
        if kind not in KIND_CODES:
            raise ValueError(f"unknown boundary kind {kind!r}")
        kind = KIND_CODES[kind]
    kind = jnp.asarray(kind)
    nx, ny = normal[..., 0], normal[..., 1]
    xi, uh, vh = q_in[..., 0], q_in[..., 1], q_in[..., 2]
    qn = uh * nx + vh * ny
    qt = -uh * ny + vh * nx
    is_wall, is_inlet, is_exit = kind == 0, kind == 1, kind == 2
    # outward normal: inflow q_in means qn_target = -q_in
    qn_g = jnp.where(is_wall, -qn, jnp.where(is_inlet, -2.0 * value - qn, qn))
    qt_g = jnp.where(is_inlet, 0.0, qt)
    xi_g = jnp.where(is_exit, 2.0 * value - xi, xi)
    return jnp.stack([xi_g, nx * qn_g - ny * qt_g, ny * qn_g + nx * qt_g], axis=-1)


@dataclass(frozen=True)
class Bathymetry:
    cell_zb: np.ndarray
    cell_hs: np.ndarray
    face_hs: np.ndarray
    bed_slope: np.ndarray  # S0 = -grad z_b per cell

    @classmethod
    def from_mesh(cls, mesh: Mesh) -> "Bathymetry":
        return cls(mesh.cell_zb, mesh.cell_hs, mesh.face_hs, -bed_gradient(mesh))


@dataclass(frozen=True, eq=False)
class Discretization:
    """Face/cell arrays of a mesh ready for vectorised residual assembly."""

    mesh: Mesh
    params: PhysParams
    bathy: Bathymetry = field(init=False)

    def __post_init__(self):
        m = self.mesh
        b = Bathymetry.from_mesh(m)
        object.__setattr__(self, "bathy", b)
        inner, bnd = m.interior_faces, m.boundary_faces
        zones = m.cell_zone
        n_table = np.asarray(self.params.manning_n, dtype=float)
        if zones.max() >= len(n_table):
            raise ValueError(f"mesh uses Manning zone {zones.max()} but only {len(n_table)} coefficient(s) given")
        kinds = np.array([KIND_CODES[m.patches[p].kind] for p in m.face_patch[bnd]], dtype=np.int64)
        vals = np.zeros(len(bnd))
        for k, f in enumerate(bnd):
            p = m.patches[m.face_patch[f]]
            if p.kind == INLET:
                vals[k] = p.value / m.patch_length(p.name)
            elif p.kind == EXIT:
                vals[k] = p.value - m.reference_ws
        arrays = dict(
            area=m.cell_area, cell_hs=b.cell_hs, slope=b.bed_slope, manning=n_table[zones],
            i_left=m.face_left[inner], i_right=m.face_right[inner], i_normal=m.face_normal[inner],
            i_len=m.face_length[inner], i_hs=m.face_hs[inner],
            b_cell=m.face_left[bnd], b_normal=m.face_normal[bnd], b_len=m.face_length[bnd],
            b_hs=m.face_hs[bnd], b_kind=kinds, b_value=vals,
        )
        for k, v in arrays.items():
            object.__setattr__(self, k, jnp.asarray(v))

    @property
    def n_cells(self) -> int:
        return self.mesh.n_cells

    def interior_flux(self, q):
        return roe_flux(q[self.i_left], q[self.i_right], self.i_hs, self.i_normal, self.params)

    def boundary_flux(self, q):
        qi = q[self.b_cell]
        qg = ghost_state(qi, self.b_kind, self.b_value, self.b_normal, self.params)
        return roe_flux(qi, qg, self.b_hs, self.b_normal, self.params)

    def flux_divergence(self, q):
        """``(1/A_i) sum_f F_f l_f`` with outward orientation, shape (n_cells, 3)."""
        fi = self.interior_flux(q) * self.i_len[:, None]
        fb = self.boundary_flux(q) * self.b_len[:, None]
        acc = jnp.zeros((self.n_cells, 3), dtype=q.dtype)
        acc = acc.at[self.i_left].add(fi)
        acc = acc.at[self.i_right].add(-fi)
        acc = acc.at[self.b_cell].add(fb)
        return acc / self.area[:, None]

    def source(self, q):
        return source_term(q, self.cell_hs, self.slope, self.manning, self.params)

    def rhs(self, q):
        """Semi-discrete ``dQ/dt`` of the finite-volume scheme."""
        return -self.flux_divergence(q) + self.source(q)

    def boundary_outflow(self, q):
        """Net mass leaving through the boundary per unit time, ``sum_b F_mass l``."""
        return jnp.sum(self.boundary_flux(q)[:, 0] * self.b_len)

    def lake_at_rest(self):
        return jnp.zeros((self.n_cells, 3))
