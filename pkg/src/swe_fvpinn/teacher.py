"""Explicit finite-volume solver (Heun time marching) used as teacher and oracle."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import jax
import jax.numpy as jnp
import numpy as np

from ._io import write_csv
from .swe import Discretization


class TeacherError(RuntimeError):
    pass


@dataclass(frozen=True)
class TeacherConfig:
    T: float
    n_snap: int = 2
    cfl: float = 0.5
    dt: float | None = None
    t0: float = 0.0
    blowup: float = 1e6

    def __post_init__(self):
        if self.n_snap < 2:
            raise ValueError("n_snap must be >= 2")
        if self.T <= self.t0:
            raise ValueError("T must exceed t0")
        if self.dt is None and not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_snap, n_cells, 3)
    outflow: np.ndarray = field(default=None)  # cumulative boundary mass outflow at each snapshot
    n_steps: int = 0

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[k], t, rel_tol=0, abs_tol=1e-9 * max(1.0, abs(t))):
            raise KeyError(f"no snapshot at t={t}")
        return self.states[k]


_JIT_CACHE: dict = {}


def _kernels(disc: Discretization):
    key = id(disc)
    if key in _JIT_CACHE and _JIT_CACHE[key][0] is disc:
        return _JIT_CACHE[key][1]

    def heun(q, dt):
        k1 = disc.rhs(q)
        b1 = disc.boundary_outflow(q)
        qs = q + dt * k1
        k2 = disc.rhs(qs)
        b2 = disc.boundary_outflow(qs)
        return q + 0.5 * dt * (k1 + k2), 0.5 * dt * (b1 + b2)

    def speeds(q):
        h = jnp.maximum(q[:, 0] + disc.cell_hs, disc.params.h_min)
        u = q[:, 1] / h
        v = q[:, 2] / h
        c = jnp.sqrt(disc.params.g * h)
        return h, u, v, c

    fns = (jax.jit(disc.rhs), jax.jit(heun), jax.jit(speeds))
    _JIT_CACHE[key] = (disc, fns)
    return fns


def rhs(state, disc: Discretization):
    return _kernels(disc)[0](jnp.asarray(state))


def heun_step(state, dt: float, disc: Discretization):
    """One predictor-corrector step; returns the new state (NumPy array)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    q, _ = _kernels(disc)[1](jnp.asarray(state), dt)
    q = np.asarray(q)
    bad = ~np.all(np.isfinite(q), axis=1)
    if bad.any():
        raise TeacherError(f"non-finite state in cell {int(np.flatnonzero(bad)[0])}")
    return q


def stable_dt(state, disc: Discretization, cfl: float = 0.5) -> float:
    """CFL time step ``cfl * min_i A_i / sum_f l_f (|u_n| + c)`` over wet cells."""
    if cfl <= 0:
        raise ValueError("cfl must be positive")
    m = disc.mesh
    h, u, v, c = (np.asarray(a) for a in _kernels(disc)[2](jnp.asarray(state)))
    wet = h > disc.params.h_min
    speed_sum = np.zeros(m.n_cells)
    for side in (m.face_left, m.face_right):
        ok = side >= 0
        cells = side[ok]
        n = m.face_normal[ok]
        un = np.abs(u[cells] * n[:, 0] + v[cells] * n[:, 1])
        np.add.at(speed_sum, cells, m.face_length[ok] * (un + c[cells]))
    ratio = m.cell_area[wet] / speed_sum[wet]
    if len(ratio) == 0:
        raise TeacherError("no wet cells")
    return float(cfl * ratio.min())


def run_teacher(ic, config: TeacherConfig, disc: Discretization, *, max_steps: int = 10_000_000) -> Trajectory:
    """March from ``t0`` to ``T`` and capture ``n_snap`` equally spaced snapshots.

    The step preceding each snapshot is shortened so the snapshot time is hit
    exactly.  The cumulative boundary outflow is integrated with the same Heun
    weights as the state, which makes the discrete mass budget exact.
    """
    _, heun, _ = _kernels(disc)
    q = jnp.asarray(np.asarray(ic, dtype=float))
    times = np.linspace(config.t0, config.T, config.n_snap)
    states = [np.asarray(q)]
    outflow = [0.0]
    t, acc, steps = config.t0, 0.0, 0
    for target in times[1:]:
        while t < target:
            dt = config.dt if config.dt is not None else stable_dt(q, disc, config.cfl)
            if t + dt >= target or math.isclose(t + dt, target, rel_tol=1e-12):
                dt = target - t
                t_next = target
            else:
                t_next = t + dt
            q, b = heun(q, dt)
            acc += float(b)
            t = t_next
            steps += 1
            if steps > max_steps:
                raise TeacherError("exceeded max_steps")
            qmax = float(jnp.max(jnp.abs(q)))
            if not math.isfinite(qmax) or qmax > config.blowup:
                raise TeacherError(f"solution blew up at t={t:.6g} s (max|Q|={qmax:.3g})")
        states.append(np.asarray(q))
        outflow.append(acc)
    return Trajectory(times=times, states=np.stack(states), outflow=np.array(outflow), n_steps=steps)


def export_trajectory(traj: Trajectory, out_dir, prefix: str = "snapshot") -> Path:
    """Write one anchor CSV per snapshot plus ``index.csv`` listing times and files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, (t, s) in enumerate(zip(traj.times, traj.states)):
        name = f"{prefix}_{k:04d}.csv"
        write_csv(out / name, ["cell_id", "xi", "uh", "vh"], [(i, *map(float, s[i])) for i in range(len(s))])
        rows.append((k, float(t), name, float(traj.outflow[k]) if traj.outflow is not None else 0.0))
    write_csv(out / "index.csv", ["snapshot", "time", "file", "cum_outflow"], rows)
    return out / "index.csv"


def load_trajectory(index_path) -> Trajectory:
    from ._io import read_csv

    index_path = Path(index_path)
    rows = read_csv(index_path, ["time", "file"])
    times, states, outflow = [], [], []
    for r in rows:
        times.append(float(r["time"]))
        cells = read_csv(index_path.parent / r["file"], ["cell_id", "xi", "uh", "vh"])
        s = np.zeros((len(cells), 3))
        for c in cells:
            s[int(c["cell_id"])] = (float(c["xi"]), float(c["uh"]), float(c["vh"]))
        states.append(s)
        outflow.append(float(r.get("cum_outflow") or 0.0))
    return Trajectory(np.array(times), np.stack(states), np.array(outflow))
