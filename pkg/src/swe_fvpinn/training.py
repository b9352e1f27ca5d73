"""Two-phase (Adam, then L-BFGS) training and sequential time windows."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

from ._io import write_csv
from .losses import LossContext, LossWeights, make_objective
from .optim import AdamConfig, LBFGSConfig, adam_step, adam_update, lbfgs_minimize

__all__ = [
    "AdamConfig", "LBFGSConfig", "TrainConfig", "WindowPlan", "TrainHistory", "TrainingError",
    "adam_step", "lbfgs_minimize", "sample_times", "fit", "WindowedModel", "WindowRun",
    "train_standard", "train_windows",
]

log = logging.getLogger(__name__)

HISTORY_HEADER = ["step", "phase", "loss_total", "loss_fvm", "loss_bc", "loss_ic", "loss_data", "lr", "wall_s"]


class TrainingError(RuntimeError):
    """Non-finite loss; ``last_good`` holds the last finite parameter vector."""

    def __init__(self, msg, last_good=None, history=None):
        super().__init__(msg)
        self.last_good = last_good
        self.history = history


@dataclass(frozen=True)
class TrainConfig:
    t0: float
    T: float
    n_t: int = 5
    weights: LossWeights = LossWeights()
    adam: AdamConfig = AdamConfig()
    lbfgs: LBFGSConfig = LBFGSConfig(max_iter=0)
    seed_init: int = 0
    seed_sampling: int = 1
    seed_noise: int = 2

    def __post_init__(self):
        if not self.t0 < self.T:
            raise ValueError("t0 must be smaller than T")
        if self.n_t < 1:
            raise ValueError("n_t must be >= 1")


@dataclass(frozen=True)
class WindowPlan:
    boundaries: tuple

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        if len(b) < 2 or np.any(np.diff(b) <= 0):
            raise ValueError("window boundaries must be strictly increasing")

    @classmethod
    def uniform(cls, t0: float, T: float, n: int) -> "WindowPlan":
        if n < 1:
            raise ValueError("need at least one window")
        b = [t0 + (T - t0) * k / n for k in range(n)] + [T]
        return cls(tuple(float(v) for v in b))

    @property
    def n(self) -> int:
        return len(self.boundaries) - 1

    def window_of(self, t) -> np.ndarray:
        """0-based window index; windows are right-closed and ``t0`` belongs to the first."""
        k = np.searchsorted(np.asarray(self.boundaries), np.asarray(t, dtype=float), side="left") - 1
        return np.clip(k, 0, self.n - 1)


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)
    markers: list = field(default_factory=list)  # (step, label)

    def append(self, step, phase, total, terms, lr, wall):
        self.rows.append((int(step), phase, float(total), float(terms["fvm"]), float(terms["bc"]),
                          float(terms["ic"]), float(terms["data"]), float(lr), float(wall)))

    @property
    def next_step(self) -> int:
        return self.rows[-1][0] + 1 if self.rows else 0

    def column(self, name: str) -> np.ndarray:
        i = HISTORY_HEADER.index(name)
        return np.array([r[i] for r in self.rows])

    def phase_rows(self, phase: str) -> list:
        return [r for r in self.rows if r[1] == phase]

    def save(self, path) -> None:
        write_csv(path, HISTORY_HEADER, self.rows)


def sample_times(n_t: int, t0: float, T: float, rng: np.random.Generator) -> np.ndarray:
    """``n_t`` i.i.d. uniform draws on the closed interval ``[t0, T]``."""
    if n_t < 1:
        raise ValueError("n_t must be >= 1")
    u = rng.integers(0, 2**53, size=n_t, endpoint=True) / float(2**53)
    return t0 + (T - t0) * u


def _compile(model: Callable, ctx: LossContext, weights: LossWeights, adam: AdamConfig):
    objective = make_objective(model, ctx, weights)
    vg = jax.value_and_grad(objective, has_aux=True)

    @jax.jit
    def adam_fn(params, m, v, step, lr, times):
        (total, terms), g = vg(params, times)
        m, v, new = adam_update(m, v, params, g, step, lr, adam.beta1, adam.beta2, adam.eps)
        return new, m, v, total, terms

    @jax.jit
    def eval_fn(params, times):
        (total, terms), g = vg(params, times)
        return total, terms, g

    return adam_fn, eval_fn


def fit(
    model: Callable,
    params,
    ctx: LossContext,
    config: TrainConfig,
    rng: np.random.Generator,
    history: TrainHistory | None = None,
    phase_prefix: str = "",
    t_range: tuple | None = None,
):
    """Adam phase (fresh times each step) followed by L-BFGS on frozen times.

    Returns ``(params, history)``.  Raises :class:`TrainingError` on a non-finite loss.
    """
    history = history or TrainHistory()
    t0, T = t_range or (config.t0, config.T)
    adam_fn, eval_fn = _compile(model, ctx, config.weights, config.adam)
    p = jnp.asarray(params, dtype=jnp.float64)
    m = jnp.zeros_like(p)
    v = jnp.zeros_like(p)
    good = np.asarray(p)  # last parameters with a finite loss
    start = time.perf_counter()
    step0 = history.next_step
    history.markers.append((step0, phase_prefix + "adam"))
    for k in range(config.adam.epochs):
        times = jnp.asarray(sample_times(config.n_t, t0, T, rng))
        lr = config.adam.lr_at(k)
        new, m, v, total, terms = adam_fn(p, m, v, k, lr, times)
        total = float(total)
        if not math.isfinite(total):
            raise TrainingError(f"non-finite loss at Adam step {k}", good, history)
        history.append(step0 + k, phase_prefix + "adam", total, terms, lr, time.perf_counter() - start)
        good = p
        p = new
        if k % 500 == 0:
            log.info("adam %d loss %.4e", k, total)

    if config.lbfgs.max_iter > 0:
        times = jnp.asarray(sample_times(config.n_t, t0, T, rng))
        step1 = history.next_step
        history.markers.append((step1, phase_prefix + "lbfgs"))
        def fun(x):
            total, _, g = eval_fn(jnp.asarray(x), times)
            return float(total), np.asarray(g)

        def cb(it, x, f, g, a):
            _, terms, _ = eval_fn(jnp.asarray(x), times)
            history.append(step1 + it - 1, phase_prefix + "lbfgs", f, terms, a, time.perf_counter() - start)

        x0 = np.asarray(p)
        f0, _ = fun(x0)
        if not math.isfinite(f0):
            raise TrainingError("non-finite loss entering L-BFGS", x0, history)
        res = lbfgs_minimize(x0, fun, config.lbfgs, callback=cb)
        p = jnp.asarray(res.x)
    return np.asarray(p), history


@dataclass(eq=False)
class WindowedModel:
    """Piecewise-in-time model dispatching each point to the window containing its time."""

    net: Callable
    plan: WindowPlan

    def __call__(self, params_list, xyt, h_s):
        xyt = jnp.asarray(xyt)
        k = jnp.clip(jnp.searchsorted(jnp.asarray(self.plan.boundaries), xyt[..., 2], side="left") - 1, 0, self.plan.n - 1)
        out = jnp.zeros(xyt.shape[:-1] + (3,))
        for w, p in enumerate(params_list):
            out = jnp.where((k == w)[..., None], self.net(p, xyt, h_s), out)
        return out


# --------------------------------------------------------------------------- case-level drivers


@dataclass
class WindowRun:
    params: list
    history: TrainHistory
    handoffs: list  # IC array used by window k (k >= 1), i.e. window k-1's prediction at tau_{k-1}
    plan: WindowPlan


def _in_window(times, lo: float, hi: float, first: bool) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    return ((times > lo) | (first & (times >= lo))) & (times <= hi)


def _context(case, ic_state, t0: float, lo: float, hi: float, first: bool, restrict: bool) -> LossContext:
    obs, anchors, extra = case.observations, case.anchors, case.extra_anchors
    if restrict:
        if obs is not None and len(obs):
            obs = obs.subset(_in_window(obs.xyt[:, 2], lo, hi, first))
        if anchors is not None and len(anchors):
            anchors = anchors.subset(_in_window(anchors.times, lo, hi, first))
        if extra is not None and len(extra):
            extra = extra.subset(_in_window(extra.times, lo, hi, first))
    return LossContext(
        case.disc, t0, ic_state=ic_state, observations=obs, anchors=anchors,
        sparse_weight=case.sparse_weight, anchor_weight=case.anchor_weight,
        extra_anchors=extra, extra_weight=case.extra_weight,
    )


def _rng(case) -> np.random.Generator:
    return np.random.default_rng(case.train.seed_sampling)


def train_standard(case):
    """Adam then L-BFGS on the whole horizon; returns ``(params, history)``."""
    cfg = case.train
    ctx = _context(case, case.ic, cfg.t0, cfg.t0, cfg.T, True, False)
    return fit(case.net, case.params0, ctx, cfg, _rng(case))


def train_windows(case, plan: WindowPlan) -> WindowRun:
    """Sequential windows with IC handoff and warm start.

    Window ``k`` starts from window ``k-1``'s parameters and uses its
    prediction at ``tau_{k-1}`` on the cell centroids as initial condition.
    Data are assigned to ``(tau_{k-1}, tau_k]`` (the first window also owns ``t0``).
    With a single window this is exactly :func:`train_standard`.
    """
    from .diagnostics import evaluate_model

    cfg = case.train
    b = plan.boundaries
    if not (math.isclose(b[0], cfg.t0) and math.isclose(b[-1], cfg.T)):
        raise ValueError("window plan must span [t0, T]")
    rng = _rng(case)
    history = TrainHistory()
    params, handoffs = [], []
    p = np.asarray(case.params0)
    ic = case.ic
    for k in range(plan.n):
        lo, hi = b[k], b[k + 1]
        if k > 0:
            ic = evaluate_model(case.net, jnp.asarray(p), case.mesh, lo)
            handoffs.append(ic)
        ctx = _context(case, ic, lo, lo, hi, k == 0, plan.n > 1)
        prefix = f"w{k + 1}_" if plan.n > 1 else ""
        try:
            p, history = fit(case.net, p, ctx, cfg, rng, history, prefix, (lo, hi))
        except TrainingError as e:
            e.last_good = params + [e.last_good]
            raise
        params.append(p)
    return WindowRun(params, history, handoffs, plan)
