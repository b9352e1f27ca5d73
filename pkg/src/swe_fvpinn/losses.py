"""Training objective: finite-volume residual, IC, soft BC and masked data terms.

Every loss takes a *model*, a callable ``model(params, xyt, h_s) -> Q`` returning
perturbation states at physical points.  :class:`~swe_fvpinn.network.SurrogateNetwork`
is such a callable; so are the momentum-scaled and lookup variants used by the
diagnostics.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

from ._io import read_csv, write_csv
from .autodiff import value_and_time_partial
from .mesh import Mesh, _point_in_polygon
from .swe import Discretization


@dataclass(frozen=True)
class LossWeights:
    fvm: float = 1.0
    bc: float = 0.0
    ic: float = 0.0
    data: float = 0.0

    def __post_init__(self):
        if min(self.fvm, self.bc, self.ic, self.data) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    fvm: float
    bc: float
    ic: float
    data: float
    total: float


def total_loss(terms: dict, weights: LossWeights) -> LossBreakdown:
    """Weighted sum of the four terms; missing terms count as zero."""
    t = {k: terms.get(k, 0.0) for k in ("fvm", "bc", "ic", "data")}
    total = weights.fvm * t["fvm"] + weights.bc * t["bc"] + weights.ic * t["ic"] + weights.data * t["data"]
    return LossBreakdown(t["fvm"], t["bc"], t["ic"], t["data"], total)


# --------------------------------------------------------------------------- data containers


@dataclass
class ObservationSet:
    """Point measurements in primitive variables ``(h, u, v)`` with per-component masks."""

    xyt: np.ndarray  # (N, 3)
    values: np.ndarray  # (N, 3): h, u, v
    mask: np.ndarray  # (N, 3) bool

    def __post_init__(self):
        self.xyt = np.asarray(self.xyt, dtype=float).reshape(-1, 3)
        self.mask = np.asarray(self.mask, dtype=bool).reshape(-1, 3)
        vals = np.asarray(self.values, dtype=float).reshape(-1, 3)
        self.values = np.where(self.mask, np.nan_to_num(vals), 0.0)
        if len(self.mask) and not self.mask.any(axis=1).all():
            raise ValueError("every observation must observe at least one component")

    def __len__(self):
        return len(self.xyt)

    @classmethod
    def empty(cls) -> "ObservationSet":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3), bool))

    def subset(self, keep) -> "ObservationSet":
        return ObservationSet(self.xyt[keep], self.values[keep], self.mask[keep])


@dataclass
class AnchorSet:
    """Dense per-cell snapshots ``(xi, uh, vh)`` at given times."""

    times: np.ndarray
    states: np.ndarray  # (K, n_cells, 3)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim == 2:
            self.states = self.states[None]
        if len(self.times) != len(self.states):
            raise ValueError("one state per anchor time required")

    def __len__(self):
        return len(self.times)

    @classmethod
    def empty(cls, n_cells: int) -> "AnchorSet":
        return cls(np.zeros(0), np.zeros((0, n_cells, 3)))

    def subset(self, keep) -> "AnchorSet":
        return AnchorSet(self.times[keep], self.states[keep])


OBS_HEADER = ["x", "y", "t", "h", "u", "v", "mask_h", "mask_u", "mask_v"]


def read_observations(path) -> ObservationSet:
    rows = read_csv(path, OBS_HEADER)

    def num(s):
        return float(s) if s not in ("", None) else np.nan

    xyt = [(float(r["x"]), float(r["y"]), float(r["t"])) for r in rows]
    vals = [(num(r["h"]), num(r["u"]), num(r["v"])) for r in rows]
    mask = [(r["mask_h"] == "1", r["mask_u"] == "1", r["mask_v"] == "1") for r in rows]
    return ObservationSet(np.array(xyt).reshape(-1, 3), np.array(vals).reshape(-1, 3), np.array(mask).reshape(-1, 3))


def write_observations(obs: ObservationSet, path) -> None:
    rows = []
    for p, v, m in zip(obs.xyt, obs.values, obs.mask):
        rows.append([*map(float, p)] + [float(v[k]) if m[k] else "" for k in range(3)] + [int(b) for b in m])
    write_csv(path, OBS_HEADER, rows)


def read_anchor(path, n_cells: int) -> np.ndarray:
    rows = read_csv(path, ["cell_id", "xi", "uh", "vh"])
    s = np.full((n_cells, 3), np.nan)
    for r in rows:
        s[int(r["cell_id"])] = (float(r["xi"]), float(r["uh"]), float(r["vh"]))
    if np.isnan(s).any():
        raise ValueError(f"{path}: anchor file does not cover every cell")
    return s


def write_anchor(state, path) -> None:
    write_csv(path, ["cell_id", "xi", "uh", "vh"], [(i, *map(float, s)) for i, s in enumerate(np.asarray(state))])


def add_noise(obs: ObservationSet, level: float, seed: int) -> ObservationSet:
    """Gaussian noise of std ``level * max|u|`` on every observed velocity component."""
    if level < 0:
        raise ValueError("noise level must be non-negative")
    if level == 0 or len(obs) == 0:
        return ObservationSet(obs.xyt.copy(), obs.values.copy(), obs.mask.copy())
    vel = np.where(obs.mask[:, 1:], obs.values[:, 1:], 0.0)
    umax = float(np.sqrt((vel**2).sum(axis=1)).max())
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, level * umax, size=(len(obs), 2))
    vals = obs.values.copy()
    vals[:, 1:] = np.where(obs.mask[:, 1:], vals[:, 1:] + noise, vals[:, 1:])
    return ObservationSet(obs.xyt.copy(), vals, obs.mask.copy())


def observations_from_state(mesh: Mesh, state, t: float, n: int, seed: int, components=("u", "v")) -> ObservationSet:
    """Sample ``n`` random points inside the mesh and read the cell state there."""
    rng = np.random.default_rng(seed)
    lo, hi = mesh.node_xy.min(axis=0), mesh.node_xy.max(axis=0)
    pts, cells = [], []
    while len(pts) < n:
        cand = lo + (hi - lo) * rng.random((4 * n, 2))
        for p in cand:
            c = mesh.locate(p[None])[0]
            if _point_in_polygon(p, mesh.node_xy[mesh.cells[c]]):
                pts.append(p)
                cells.append(c)
                if len(pts) == n:
                    break
    pts, cells = np.array(pts), np.array(cells)
    s = np.asarray(state)[cells]
    h = np.maximum(s[:, 0] + mesh.cell_hs[cells], 1e-12)
    vals = np.stack([h, s[:, 1] / h, s[:, 2] / h], axis=1)
    mask = np.zeros((n, 3), bool)
    for k, name in enumerate(("h", "u", "v")):
        mask[:, k] = name in components
    xyt = np.column_stack([pts, np.full(n, float(t))])
    return ObservationSet(xyt, vals, mask)


# --------------------------------------------------------------------------- loss context


@dataclass(eq=False)
class LossContext:
    """Everything a loss evaluation needs besides the parameters and sampled times.

    Built once per training run; array fields are device arrays ready for jit.
    """

    disc: Discretization
    t0: float
    ic_state: np.ndarray | None = None
    observations: ObservationSet | None = None
    anchors: AnchorSet | None = None
    sparse_weight: float = 1.0
    anchor_weight: float = 1.0
    extra_anchors: AnchorSet | None = None  # e.g. teacher snapshots
    extra_weight: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        m = self.disc.mesh
        self.centroid = jnp.asarray(m.cell_centroid)
        self.cell_hs = jnp.asarray(m.cell_hs)
        bnd = m.boundary_faces
        self.bface_mid = jnp.asarray(m.face_mid[bnd])
        obs = self.observations if self.observations is not None else ObservationSet.empty()
        self.obs_xyt = jnp.asarray(obs.xyt)
        self.obs_values = jnp.asarray(obs.values)
        self.obs_mask = jnp.asarray(obs.mask.astype(float))
        self.obs_hs = jnp.asarray(m.cell_hs[m.locate(obs.xyt[:, :2])] if len(obs) else np.zeros(0))
        pools = []
        for a, w in ((self.anchors, self.anchor_weight), (self.extra_anchors, self.extra_weight)):
            if a is not None and len(a):
                pools.append((jnp.asarray(a.times), jnp.asarray(a.states), w))
        self.anchor_pools = pools
        self.n_data = len(obs) + sum(int(p[0].shape[0]) * m.n_cells for p in pools)
        self.ic = None if self.ic_state is None else jnp.asarray(self.ic_state)


def _cell_points(ctx: LossContext, times):
    times = jnp.atleast_1d(jnp.asarray(times, dtype=jnp.float64))
    nt, nc = times.shape[0], ctx.disc.n_cells
    x = jnp.broadcast_to(ctx.centroid[None, :, 0], (nt, nc))
    y = jnp.broadcast_to(ctx.centroid[None, :, 1], (nt, nc))
    t = jnp.broadcast_to(times[:, None], (nt, nc))
    hs = jnp.broadcast_to(ctx.cell_hs[None, :], (nt, nc))
    return x, y, t, hs


def fvm_residuals(model: Callable, params, ctx: LossContext, times):
    """Cell residuals ``dQ/dt + div F - S`` at each time, shape ``(n_t, n_cells, 3)``."""
    x, y, t, hs = _cell_points(ctx, times)
    q, dq = value_and_time_partial(model, params, x, y, t, hs)
    rhs = jax.vmap(ctx.disc.rhs)(q)
    return dq - rhs


def fvm_residual_at(model: Callable, params, ctx: LossContext, t: float):
    return fvm_residuals(model, params, ctx, jnp.array([t]))[0]


def loss_fvm(model: Callable, params, ctx: LossContext, times):
    r = fvm_residuals(model, params, ctx, times)
    nt, nc = r.shape[0], r.shape[1]
    return jnp.sum(ctx.disc.area[None, :] * jnp.sum(r * r, axis=-1)) / (nt * nc)


def loss_ic(model: Callable, params, ctx: LossContext, ic_state=None, t0=None):
    ic = ctx.ic if ic_state is None else jnp.asarray(ic_state)
    t0 = ctx.t0 if t0 is None else t0
    nc = ctx.disc.n_cells
    xyt = jnp.column_stack([ctx.centroid, jnp.full(nc, t0)])
    q = model(params, xyt, ctx.cell_hs)
    return jnp.sum((q - ic) ** 2) / nc


def loss_bc(model: Callable, params, ctx: LossContext, times):
    """Mean squared boundary-condition defect at boundary face midpoints."""
    d = ctx.disc
    nb = d.b_cell.shape[0]
    if nb == 0:
        return jnp.array(0.0)
    times = jnp.atleast_1d(jnp.asarray(times, dtype=jnp.float64))
    nt = times.shape[0]
    mid = jnp.broadcast_to(ctx.bface_mid[None], (nt, nb, 2))
    xyt = jnp.concatenate([mid, jnp.broadcast_to(times[:, None, None], (nt, nb, 1))], axis=-1)
    q = model(params, xyt, jnp.broadcast_to(d.b_hs[None], (nt, nb)))
    qn = q[..., 1] * d.b_normal[:, 0] + q[..., 2] * d.b_normal[:, 1]
    dev = jnp.where(d.b_kind == 0, qn, jnp.where(d.b_kind == 1, -qn - d.b_value, q[..., 0] - d.b_value))
    return jnp.mean(dev * dev)


def loss_data(model: Callable, params, ctx: LossContext):
    """Pooled masked MSE over sparse observations and dense anchor cells."""
    if ctx.n_data == 0:
        return jnp.array(0.0)
    total = jnp.array(0.0)
    if ctx.obs_xyt.shape[0]:
        q = model(params, ctx.obs_xyt, ctx.obs_hs)
        h = q[:, 0] + ctx.obs_hs
        pred = jnp.stack([h, q[:, 1] / h, q[:, 2] / h], axis=-1)
        diff = (pred - ctx.obs_values) * ctx.obs_mask
        total = total + ctx.sparse_weight * jnp.sum(diff * diff)
    for times, states, w in ctx.anchor_pools:
        x, y, t, hs = _cell_points(ctx, times)
        q = model(params, jnp.stack([x, y, t], axis=-1), hs)
        total = total + w * jnp.sum((q - states) ** 2)
    return total / ctx.n_data


def loss_terms(model: Callable, params, ctx: LossContext, times, weights: LossWeights) -> dict:
    """All four terms; terms with zero weight are skipped (reported as 0)."""
    zero = jnp.array(0.0)
    return {
        "fvm": loss_fvm(model, params, ctx, times) if weights.fvm > 0 else zero,
        "bc": loss_bc(model, params, ctx, times) if weights.bc > 0 else zero,
        "ic": loss_ic(model, params, ctx) if (weights.ic > 0 and ctx.ic is not None) else zero,
        "data": loss_data(model, params, ctx) if weights.data > 0 else zero,
    }


def all_loss_terms(model: Callable, params, ctx: LossContext, times) -> dict:
    """All four terms regardless of weights (for diagnostics)."""
    return {
        "fvm": loss_fvm(model, params, ctx, times),
        "bc": loss_bc(model, params, ctx, times),
        "ic": loss_ic(model, params, ctx) if ctx.ic is not None else jnp.array(0.0),
        "data": loss_data(model, params, ctx),
    }


def make_objective(model: Callable, ctx: LossContext, weights: LossWeights):
    """``f(params, times) -> (total, terms)`` suitable for ``jax.value_and_grad(has_aux=True)``."""

    def objective(params, times):
        terms = loss_terms(model, params, ctx, times, weights)
        return total_loss(terms, weights).total, terms

    return objective
