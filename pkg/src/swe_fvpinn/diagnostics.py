"""Error norms, the momentum-scaling loss landscape and mass-budget audits."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import jax
import jax.numpy as jnp
import numpy as np

from ._io import write_csv
from .losses import LossContext, LossWeights, all_loss_terms, total_loss
from .mesh import Mesh
from .teacher import Trajectory


def _pair(pred, ref):
    pred = np.asarray(pred, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if pred.shape != ref.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {ref.shape}")
    return pred, ref


def l2_error(pred, ref, areas=None) -> float:
    """Area-weighted RMS difference ``sqrt(sum A (p - r)^2 / sum A)``."""
    pred, ref = _pair(pred, ref)
    a = np.ones_like(pred) if areas is None else np.asarray(areas, dtype=float)
    if a.shape != pred.shape:
        raise ValueError("areas must match the field length")
    return float(np.sqrt(np.sum(a * (pred - ref) ** 2) / np.sum(a)))


def linf_error(pred, ref) -> float:
    pred, ref = _pair(pred, ref)
    return float(np.max(np.abs(pred - ref))) if pred.size else 0.0


# --------------------------------------------------------------------------- error reports


@dataclass
class ErrorReport:
    time: float
    entries: dict  # var -> (l2, linf)

    def rows(self):
        return [(self.time, k, l2, li) for k, (l2, li) in self.entries.items()]


def primitives(state, cell_hs, h_min: float = 1e-6):
    """``(h, u, v)`` per cell from a perturbation state."""
    q = np.asarray(state, dtype=float)
    h = q[:, 0] + np.asarray(cell_hs)
    hd = np.maximum(h, h_min)
    wet = h > h_min
    u = np.where(wet, q[:, 1] / hd, 0.0)
    v = np.where(wet, q[:, 2] / hd, 0.0)
    return h, u, v


def error_report(pred_state, ref_state, mesh: Mesh, t: float) -> ErrorReport:
    """Norms for h, speed, u, v and the three conserved components."""
    ph, pu, pv = primitives(pred_state, mesh.cell_hs)
    rh, ru, rv = primitives(ref_state, mesh.cell_hs)
    fields = {
        "h": (ph, rh),
        "speed": (np.hypot(pu, pv), np.hypot(ru, rv)),
        "u": (pu, ru),
        "v": (pv, rv),
        "xi": (np.asarray(pred_state)[:, 0], np.asarray(ref_state)[:, 0]),
        "uh": (np.asarray(pred_state)[:, 1], np.asarray(ref_state)[:, 1]),
        "vh": (np.asarray(pred_state)[:, 2], np.asarray(ref_state)[:, 2]),
    }
    return ErrorReport(float(t), {k: (l2_error(p, r, mesh.cell_area), linf_error(p, r)) for k, (p, r) in fields.items()})


def velocity_l2(pred_state, ref_state, mesh: Mesh) -> float:
    """Area-weighted RMS of the velocity vector difference."""
    _, pu, pv = primitives(pred_state, mesh.cell_hs)
    _, ru, rv = primitives(ref_state, mesh.cell_hs)
    a = mesh.cell_area
    return float(np.sqrt(np.sum(a * ((pu - ru) ** 2 + (pv - rv) ** 2)) / np.sum(a)))


def write_error_reports(reports: Sequence[ErrorReport], path) -> None:
    write_csv(path, ["time", "var", "l2", "linf"], [r for rep in reports for r in rep.rows()])


def evaluate_model(model: Callable, params, mesh: Mesh, t: float) -> np.ndarray:
    """Model prediction at every cell centroid at time ``t``."""
    xyt = np.column_stack([mesh.cell_centroid, np.full(mesh.n_cells, float(t))])
    return np.asarray(model(params, jnp.asarray(xyt), jnp.asarray(mesh.cell_hs)))


# --------------------------------------------------------------------------- landscape


@dataclass
class LandscapeCurve:
    alpha: np.ndarray
    loss_fvm: np.ndarray
    loss_data: np.ndarray
    loss_total: np.ndarray

    def value(self, name: str, a: float) -> float:
        k = int(np.flatnonzero(np.isclose(self.alpha, a, rtol=0, atol=1e-12))[0])
        return float(getattr(self, name)[k])

    def save(self, path) -> None:
        write_csv(path, ["alpha", "loss_fvm", "loss_data", "loss_total"],
                  list(zip(self.alpha, self.loss_fvm, self.loss_data, self.loss_total)))


def momentum_scaled(model: Callable, alpha: float) -> Callable:
    """Predictor ``(xi, alpha*uh, alpha*vh)``; the depth output is left untouched."""
    def scaled(params, xyt, h_s):
        return model(params, xyt, h_s) * jnp.stack([1.0, alpha, alpha])

    return scaled


def alpha_sweep(model: Callable, params, ctx: LossContext, alphas, times, weights: LossWeights | None = None) -> LandscapeCurve:
    """Loss terms of the momentum-scaled predictor for each ``alpha`` on frozen ``times``.

    ``0`` and ``1`` are always added to the grid.
    """
    weights = weights or LossWeights(1.0, 0.0, 0.0, 1.0)
    grid = np.unique(np.concatenate([np.asarray(alphas, dtype=float), [0.0, 1.0]]))
    times = jnp.asarray(np.atleast_1d(np.asarray(times, dtype=float)))
    params = jnp.asarray(params) if not isinstance(params, (list, tuple)) else [jnp.asarray(p) for p in params]

    @jax.jit
    def terms_at(a):
        return all_loss_terms(momentum_scaled(model, a), params, ctx, times)

    fvm, data, tot = [], [], []
    for a in grid:
        terms = {k: float(v) for k, v in terms_at(a).items()}
        fvm.append(terms["fvm"])
        data.append(terms["data"])
        tot.append(float(total_loss(terms, weights).total))
    return LandscapeCurve(grid, np.array(fvm), np.array(data), np.array(tot))


# --------------------------------------------------------------------------- mass budget


@dataclass
class ConservationReport:
    interval: np.ndarray  # (n, 2) snapshot times
    volume_change: np.ndarray
    net_inflow: np.ndarray
    abs_error: np.ndarray
    rel_error: np.ndarray

    @property
    def max_rel(self) -> float:
        return float(self.rel_error.max()) if self.rel_error.size else 0.0

    def passes(self, tol: float = 1e-10) -> bool:
        return self.max_rel <= tol


def conservation_audit(traj: Trajectory, mesh: Mesh) -> ConservationReport:
    """Compare the change of ``sum A xi`` with the integrated boundary mass flux.

    The relative error is taken against the total water volume at the start of
    each interval (the perturbation volume can be zero).
    """
    if len(traj.times) < 2:
        raise ValueError("audit needs at least two snapshots")
    if traj.outflow is None:
        raise ValueError("trajectory carries no boundary-flux record")
    vol_xi = traj.states[:, :, 0] @ mesh.cell_area
    total = vol_xi + float(mesh.cell_hs @ mesh.cell_area)
    dv = np.diff(vol_xi)
    inflow = -np.diff(traj.outflow)
    err = np.abs(dv - inflow)
    denom = np.maximum(np.abs(total[:-1]), np.finfo(float).tiny)
    return ConservationReport(np.column_stack([traj.times[:-1], traj.times[1:]]), dv, inflow, err, err / denom)


# --------------------------------------------------------------------------- gradient check


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    worst_index: int


def gradient_check(fun: Callable, params, n_coords: int | None = None, step: float = 1e-5, seed: int = 0,
                   floor: float = 1e-8) -> GradCheckReport:
    """Compare ``jax.grad(fun)`` with central differences on (a sample of) coordinates.

    The per-coordinate relative error is ``|fd - ad| / max(|fd|, |ad|, floor * max|ad|)``.
    """
    x = np.asarray(params, dtype=float)
    f = jax.jit(fun)
    g = np.asarray(jax.jit(jax.grad(fun))(jnp.asarray(x)))
    idx = np.arange(x.size)
    if n_coords is not None and n_coords < x.size:
        idx = np.sort(np.random.default_rng(seed).choice(x.size, n_coords, replace=False))
    scale = floor * max(float(np.abs(g).max()), np.finfo(float).tiny)
    worst, worst_i = 0.0, -1
    for i in idx:
        h = step * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fd = (float(f(jnp.asarray(xp))) - float(f(jnp.asarray(xm)))) / (2 * h)
        err = abs(fd - g[i]) / max(abs(fd), abs(g[i]), scale)
        if err > worst:
            worst, worst_i = err, int(i)
    return GradCheckReport(worst, len(idx), worst_i)
