"""Analytic reference solutions: wet-bed dam break, the parabolic bump bed, lake at rest."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DamBreakSpec:
    h_left: float = 2.0
    h_right: float = 0.5
    x0: float = 10.0
    g: float = 9.81

    def __post_init__(self):
        if not self.h_left > self.h_right > 0:
            raise ValueError("need h_left > h_right > 0 (wet bed)")


def _compatibility(hm, spec: DamBreakSpec) -> float:
    """Rarefaction velocity minus shock velocity behind the shock, as functions of h_m."""
    g, hl, hr = spec.g, spec.h_left, spec.h_right
    u_raref = 2.0 * (math.sqrt(g * hl) - math.sqrt(g * hm))
    u_shock = (hm - hr) * math.sqrt(0.5 * g * (hm + hr) / (hm * hr))
    return u_raref - u_shock


def stoker_middle_state(spec: DamBreakSpec, tol: float = 1e-12):
    """Middle depth, velocity and shock speed by bisection on ``[h_R, h_L]``."""
    lo, hi = spec.h_right, spec.h_left
    flo = _compatibility(lo, spec)
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        fm = _compatibility(mid, spec)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    hm = 0.5 * (lo + hi)
    um = 2.0 * (math.sqrt(spec.g * spec.h_left) - math.sqrt(spec.g * hm))
    shock = hm * um / (hm - spec.h_right)
    return hm, um, shock


def stoker_dambreak(spec: DamBreakSpec, x, t: float):
    """Exact depth and velocity of the wet-bed dam break at positions ``x`` and time ``t``."""
    x = np.asarray(x, dtype=float)
    if t < 0:
        raise ValueError("t must be non-negative")
    h = np.where(x < spec.x0, spec.h_left, spec.h_right).astype(float)
    u = np.zeros_like(h)
    if t == 0:
        return h, u
    g = spec.g
    hm, um, s = stoker_middle_state(spec)
    cl, cm = math.sqrt(g * spec.h_left), math.sqrt(g * hm)
    xi = (x - spec.x0) / t
    fan = (xi >= -cl) & (xi < um - cm)
    mid = (xi >= um - cm) & (xi < s)
    h = np.where(fan, (2.0 * cl - xi) ** 2 / (9.0 * g), h)
    u = np.where(fan, 2.0 / 3.0 * (xi + cl), u)
    h = np.where(mid, hm, h)
    u = np.where(mid, um, u)
    h = np.where(xi < -cl, spec.h_left, h)
    h = np.where(xi >= s, spec.h_right, h)
    u = np.where((xi < -cl) | (xi >= s), 0.0, u)
    return h, u


def bump_bed(x):
    """Parabolic bump of crest 0.2 m on ``8 < x < 12``, flat elsewhere."""
    x = np.asarray(x, dtype=float)
    z = np.where((x > 8.0) & (x < 12.0), 0.2 - 0.05 * (x - 10.0) ** 2, 0.0)
    return z if z.ndim else float(z)


def lake_at_rest(mesh, w_s: float | None = None) -> np.ndarray:
    """Zero perturbation state; ``w_s`` must equal the mesh reference level and wet every cell."""
    w = mesh.reference_ws if w_s is None else float(w_s)
    if not math.isclose(w, mesh.reference_ws, rel_tol=0, abs_tol=1e-14):
        raise ValueError("lake_at_rest expects w_s equal to the mesh reference water level")
    if np.any(mesh.cell_zb >= w) or np.any(mesh.node_zb > w):
        raise ValueError("partially dry domain: w_s must exceed the bed everywhere")
    return np.zeros((mesh.n_cells, 3))
