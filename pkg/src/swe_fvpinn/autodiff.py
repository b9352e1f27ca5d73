"""Differentiation engine.

Programs are plain Python callables built from ``jax.numpy`` operations and the
primitives below.  Reverse mode gives parameter gradients; the time partial is a
forward-mode tangent in ``t`` nested inside it, so losses containing
``dQ/dt`` remain differentiable with respect to the parameters.

``fabs``, ``fmax`` and ``fmin`` pin down the subgradients used at kinks: ``|x|``
has derivative 0 at 0 and ties in max/min take the first argument's branch.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np


class NonFiniteError(FloatingPointError):
    """A non-finite value appeared while evaluating a program or its gradient."""


def fabs(x):
    return jnp.where(x > 0, x, jnp.where(x < 0, -x, 0.0))


def fmax(a, b):
    return jnp.where(a >= b, a, b)


def fmin(a, b):
    return jnp.where(a <= b, a, b)


def softplus(x):
    return jnp.logaddexp(x, 0.0)


def safe_sqrt(x):
    """sqrt with a zero (not infinite) derivative at 0."""
    pos = x > 0
    return jnp.where(pos, jnp.sqrt(jnp.where(pos, x, 1.0)), 0.0)


@dataclass
class GradientResult:
    value: float
    grad: np.ndarray
    aux: object = None


def _locate_nonfinite(fn, params) -> str:
    try:
        with jax.debug_nans(True), jax.debug_infs(True):
            jax.value_and_grad(fn)(params)
    except FloatingPointError as e:
        return str(e).splitlines()[0]
    return "non-finite result (primitive not isolated)"


def value_and_grad(program: Callable, params, *, check: bool = True) -> GradientResult:
    """Scalar value and exact gradient of ``program`` at ``params``.

    Raises :class:`NonFiniteError` naming the offending primitive when the value
    or gradient is not finite.
    """
    params = jnp.asarray(params, dtype=jnp.float64)
    val, g = jax.value_and_grad(program)(params)
    val = float(val)
    g = np.asarray(g)
    if check and not (np.isfinite(val) and np.all(np.isfinite(g))):
        where = _locate_nonfinite(program, params)
        raise NonFiniteError(f"non-finite value or gradient: {where}")
    return GradientResult(val, g)


def time_partial(model: Callable, params, x, y, t, h_s=0.0):
    """Exact ``dQ/dt`` of ``model(params, xyt, h_s)`` at the given points.

    Works on scalars or arrays of points; returns shape ``(..., 3)``.  The result
    is itself differentiable with respect to ``params``.
    """
    _, dq = value_and_time_partial(model, params, x, y, t, h_s)
    return dq


def value_and_time_partial(model: Callable, params, x, y, t, h_s=0.0):
    x, y, t = jnp.broadcast_arrays(*(jnp.asarray(v, dtype=jnp.float64) for v in (x, y, t)))
    h_s = jnp.broadcast_to(jnp.asarray(h_s, dtype=jnp.float64), x.shape)

    def f(tt):
        return model(params, jnp.stack([x, y, tt], axis=-1), h_s)

    return jax.jvp(f, (t,), (jnp.ones_like(t),))
