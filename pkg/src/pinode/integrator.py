"""Fixed-step classical Runge-Kutta integration.

A derivative function has the signature ``f(t, z, u) -> zdot`` where ``z`` and
``zdot`` are tuples of components. Components can be floats, arrays holding a
batch of independent systems, or :class:`~pinode.diffcore.Var` objects; the
step is built from elementary arithmetic only, so a recorded step can be
differentiated end to end.
"""

from __future__ import annotations

import math

import numpy as np

from .diffcore import Var
from .exceptions import InvalidArgument, NumericFailure

__all__ = ["rk4_step", "rk4_step_components", "rollout"]


def _finite(k, stage):
    for c in k:
        if isinstance(c, float):
            ok = math.isfinite(c)
        elif isinstance(c, Var):
            continue  # checked when the node was created
        else:
            ok = np.isfinite(c).all()
        if not ok:
            raise NumericFailure(f"non-finite derivative in RK4 stage {stage}", where=stage)


def rk4_step_components(f, t, z, u, h):
    """One RK4 step on a tuple of components; ``u`` is held over the step."""
    try:
        k1 = f(t, z, u)
        _finite(k1, "k1")
        k2 = f(t + h / 2, tuple(a + (h / 2) * b for a, b in zip(z, k1)), u)
        _finite(k2, "k2")
        k3 = f(t + h / 2, tuple(a + (h / 2) * b for a, b in zip(z, k2)), u)
        _finite(k3, "k3")
        k4 = f(t + h, tuple(a + h * b for a, b in zip(z, k3)), u)
        _finite(k4, "k4")
    except NumericFailure as e:
        if e.where in ("k1", "k2", "k3", "k4"):
            raise
        raise NumericFailure(f"{e} during RK4 step at t={t:g}", where=e.where) from e
    return tuple(
        a + (h / 6) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        for a, b1, b2, b3, b4 in zip(z, k1, k2, k3, k4)
    )


def rk4_step(f, t, z, u, h):
    """Advance ``z`` by one step of size ``h``.

    ``z`` is either a tuple of components or an array whose last axis holds the
    components; the result has the same form.
    """
    if not h > 0:
        raise InvalidArgument(f"step size must be positive, got {h}")
    if isinstance(z, np.ndarray):
        out = rk4_step_components(f, t, tuple(np.moveaxis(z, -1, 0)), u, h)
        return np.stack(np.broadcast_arrays(*out), axis=-1)
    return rk4_step_components(f, t, tuple(z), u, h)


def rollout(f, z0, controls, h, t0=0.0):
    """Integrate from ``z0`` applying ``controls[n]`` over step n.

    Returns an array of shape (len(controls) + 1, *z0.shape). ``controls`` may
    carry a trailing batch axis matching a batch of initial states.
    """
    controls = np.asarray(controls, dtype=np.float64)
    if controls.ndim == 0 or controls.shape[0] == 0:
        raise InvalidArgument("rollout needs at least one control value")
    if not h > 0:
        raise InvalidArgument(f"step size must be positive, got {h}")
    z = tuple(np.moveaxis(np.asarray(z0, dtype=np.float64), -1, 0))
    out = [np.stack(np.broadcast_arrays(*z), axis=-1)]
    for n, u in enumerate(controls):
        try:
            z = rk4_step_components(f, t0 + n * h, z, u, h)
        except NumericFailure as e:
            raise NumericFailure(f"{e} (rollout step {n})", where=n) from e
        out.append(np.stack(np.broadcast_arrays(*z), axis=-1))
    shape = np.broadcast_shapes(*(a.shape for a in out))
    return np.stack([np.broadcast_to(a, shape) for a in out])
