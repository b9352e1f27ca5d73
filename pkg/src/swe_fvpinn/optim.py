"""Adam with step decay and L-BFGS with a strong-Wolfe line search (NumPy, float64)."""
from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_factor: float = 1.0
    decay_every: int = 0
    epochs: int = 1000

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("Adam learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")

    def lr_at(self, step: int) -> float:
        """Learning rate for 0-based ``step`` (multiplied by the factor every ``decay_every`` steps)."""
        if self.decay_every and self.decay_every > 0:
            return self.lr * self.decay_factor ** (step // self.decay_every)
        return self.lr


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_update(m, v, params, grads, step: int, lr: float, beta1: float, beta2: float, eps: float):
    """Pure Adam update; works on NumPy or JAX arrays.  ``step`` is 0-based."""
    m = beta1 * m + (1.0 - beta1) * grads
    v = beta2 * v + (1.0 - beta2) * grads * grads
    k = step + 1
    mhat = m / (1.0 - beta1**k)
    vhat = v / (1.0 - beta2**k)
    return m, v, params - lr * mhat / ((vhat) ** 0.5 + eps)


def adam_step(state: AdamState, params, grads, config: AdamConfig):
    """One bias-corrected Adam step at ``state.step``; returns ``(new_state, new_params)``."""
    lr = config.lr_at(state.step)
    m, v, p = adam_update(state.m, state.v, np.asarray(params), np.asarray(grads), state.step, lr,
                          config.beta1, config.beta2, config.eps)
    return AdamState(m, v, state.step + 1), p


# --------------------------------------------------------------------------- L-BFGS


@dataclass(frozen=True)
class LBFGSConfig:
    memory: int = 10
    max_iter: int = 500
    c1: float = 1e-4
    c2: float = 0.9
    gtol: float = 1e-9
    max_ls: int = 25
    refine: float = 1e-2

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError("L-BFGS memory must be >= 1")
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")


@dataclass
class LBFGSResult:
    x: np.ndarray
    f: float
    grad_norm: float
    n_iter: int
    n_eval: int
    converged: bool
    message: str


def _two_loop(g, S, Y):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        q -= a * y
        alphas.append((rho, a))
    if S:
        s, y = S[-1], Y[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), (rho, a) in zip(zip(S, Y), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def _cubic_min(a, fa, da, b, fb, db):
    """Minimiser of the cubic interpolating (a, fa, da), (b, fb, db); None if undefined."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    den = db - da + 2.0 * d2
    if den == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / den


def _refine(phi, a, f, g, dp, f0, dphi0, c1, c2, tol):
    # one cubic step towards the exact line minimiser when the accepted point is far from it
    if tol <= 0 or abs(dp) <= -tol * dphi0:
        return a, f, g, True
    b = _cubic_min(0.0, f0, dphi0, a, f, dp)
    if b is None or not (0 < b <= 4 * a) or abs(b - a) <= 1e-12 * a:
        return a, f, g, True
    fb, gb, db = phi(b)
    if fb <= f and fb <= f0 + c1 * b * dphi0 and abs(db) <= -c2 * dphi0:
        return b, fb, gb, True
    return a, f, g, True


def _strong_wolfe(fun, x, f0, g0, d, a1, c1, c2, max_ls, refine=0.0):
    dphi0 = float(g0 @ d)
    evals = 0

    def phi(a):
        nonlocal evals
        evals += 1
        f, g = fun(x + a * d)
        f = float(f)
        if not math.isfinite(f):
            f = math.inf
        return f, g, float(g @ d) if math.isfinite(f) else math.inf

    def zoom(lo, f_lo, d_lo, g_lo, hi, f_hi, d_hi):
        for _ in range(max_ls):
            a = None
            if math.isfinite(f_hi) and math.isfinite(d_hi):
                a = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            w = abs(hi - lo)
            left, right = min(lo, hi), max(lo, hi)
            if a is None or not (left + 0.1 * w <= a <= right - 0.1 * w):
                a = 0.5 * (lo + hi)
            f, g, dp = phi(a)
            if f > f0 + c1 * a * dphi0 or f >= f_lo:
                hi, f_hi, d_hi = a, f, dp
            else:
                if abs(dp) <= -c2 * dphi0:
                    return a, f, g, True
                if dp * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo, g_lo = a, f, dp, g
            if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
                break
        # best point satisfying sufficient decrease, if any
        return lo, f_lo, g_lo, lo > 0 and f_lo < f0

    a_prev, f_prev, d_prev, g_prev = 0.0, f0, dphi0, g0
    a = a1
    for i in range(max_ls):
        f, g, dp = phi(a)
        if f > f0 + c1 * a * dphi0 or (i > 0 and f >= f_prev):
            r = zoom(a_prev, f_prev, d_prev, g_prev, a, f, dp)
            return (*r, evals)
        if abs(dp) <= -c2 * dphi0:
            return (*_refine(phi, a, f, g, dp, f0, dphi0, c1, c2, refine), evals)
        if dp >= 0:
            r = zoom(a, f, dp, g, a_prev, f_prev, d_prev)
            return (*r, evals)
        a_prev, f_prev, d_prev, g_prev = a, f, dp, g
        a *= 2.0
    return a_prev, f_prev, g_prev, a_prev > 0 and f_prev < f0, evals


def lbfgs_minimize(x0, fun: Callable, config: LBFGSConfig = LBFGSConfig(), callback: Callable | None = None) -> LBFGSResult:
    """Minimise ``fun(x) -> (f, grad)`` with limited-memory BFGS.

    Accepted iterates satisfy the strong Wolfe conditions, so the objective never
    increases.  On a line-search failure the best point so far is returned with a
    warning.  ``callback(it, x, f, g, step)`` runs after each accepted iterate.
    """
    x = np.array(x0, dtype=np.float64)
    f, g = fun(x)
    f, g = float(f), np.asarray(g, dtype=np.float64)
    n_eval = 1
    S: deque = deque(maxlen=config.memory)
    Y: deque = deque(maxlen=config.memory)
    it = 0
    msg, converged = "max_iter reached", False
    while True:
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm <= config.gtol:
            msg, converged = "gradient tolerance reached", True
            break
        if it >= config.max_iter:
            break
        d = -_two_loop(g, S, Y)
        if not g @ d < 0:
            S.clear()
            Y.clear()
            d = -g
        a0 = 1.0 if S else min(1.0, 1.0 / max(np.abs(g).sum(), 1e-300))
        a, f_new, g_new, ok, ev = _strong_wolfe(fun, x, f, g, d, a0, config.c1, config.c2, config.max_ls, config.refine)
        n_eval += ev
        if not ok:
            if a > 0 and f_new < f:
                x, f, g = x + a * d, f_new, np.asarray(g_new, dtype=np.float64)
                it += 1
                if callback:
                    callback(it, x, f, g, a)
            warnings.warn("L-BFGS line search failed; returning best point found", RuntimeWarning, stacklevel=2)
            msg = "line search failed"
            break
        g_new = np.asarray(g_new, dtype=np.float64)
        s = a * d
        y = g_new - g
        if y @ s > 1e-12 * np.sqrt((y @ y) * (s @ s)):
            S.append(s)
            Y.append(y)
        x, f, g = x + s, f_new, g_new
        it += 1
        if callback:
            callback(it, x, f, g, a)
    return LBFGSResult(x, f, float(np.max(np.abs(g))) if g.size else 0.0, it, n_eval, converged, msg)
