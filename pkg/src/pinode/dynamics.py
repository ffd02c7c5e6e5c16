"""Closed-form cart-pole equations of motion.

Coordinates are the cart position ``x`` and the pole angle ``phi``, measured
from the upward vertical and never wrapped; a point at distance ``r`` along
the pole sits at ``(x + r sin phi, r cos phi)``. The
pole is a uniform rod of mass ``m_p`` carrying a point mass ``m_s`` at its tip,
which gives

    M(q)     = [[m_tot, sigma cos phi], [sigma cos phi, J]]
    C(q,qd)qd = [-sigma sin phi phi_dot^2, 0]
    G(q)     = [0, -sigma g sin phi]

with ``sigma`` the first mass moment and ``J`` the inertia about the pivot.

All functions are written with the :mod:`pinode.diffcore` math helpers, so the
state components may be floats, numpy arrays (a batch of states) or recorded
:class:`~pinode.diffcore.Var` objects.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from functools import cached_property
from typing import Any, NamedTuple

import numpy as np

from . import diffcore as dc
from .exceptions import InvalidArgument, NumericFailure

__all__ = [
    "PhysicalParams",
    "DerivedConstants",
    "State",
    "mass_matrix",
    "coriolis_term",
    "gravity_term",
    "energy",
    "pure_ode_forces",
    "hybrid_forces",
    "acceleration",
    "pure_ode_rhs",
    "hybrid_rhs",
    "network_input",
]

DET_MIN = 1e-12


@dataclass(frozen=True)
class DerivedConstants:
    m_tot: float
    sigma: float
    J: float


@dataclass(frozen=True)
class PhysicalParams:
    """Cart-pole constants; defaults are the identified rig values."""

    m_c: float = 0.466
    m_p: float = 0.06
    m_s: float = 0.012
    l: float = 0.201  # noqa: E741
    mu_c: float = 0.0408
    mu_p: float = 0.0020
    g: float = 9.81

    def __post_init__(self):
        for name in ("m_c", "m_p", "m_s", "l", "g"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidArgument(f"{name} must be positive and finite, got {v!r}")
        for name in ("mu_c", "mu_p"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise InvalidArgument(f"{name} must be non-negative, got {v!r}")
        d = self.derived
        if not d.m_tot * d.J > d.sigma**2:
            raise InvalidArgument("mass matrix would not be positive definite")

    @cached_property
    def derived(self):
        m_tot = self.m_c + self.m_p + self.m_s
        sigma = self.m_p * self.l / 2.0 + self.m_s * self.l
        J = self.m_p * self.l**2 / 3.0 + self.m_s * self.l**2
        return DerivedConstants(m_tot, sigma, J)

    def replace(self, **changes):
        return PhysicalParams(**{**asdict(self), **changes})

    def frictionless(self):
        return self.replace(mu_c=0.0, mu_p=0.0)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgument(f"unknown physical parameter(s): {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self):
        return asdict(self)


class State(NamedTuple):
    x: Any
    phi: Any
    x_dot: Any
    phi_dot: Any


def mass_matrix(p, state):
    d = p.derived
    off = d.sigma * np.cos(state[1])
    return np.array([[np.full_like(off, d.m_tot), off], [off, np.full_like(off, d.J)]])


def coriolis_term(p, state):
    """The product C(q, qd) qd."""
    phi, phi_dot = state[1], state[3]
    return (-p.derived.sigma * dc.sin(phi) * dc.square(phi_dot), 0.0 * phi_dot)


def gravity_term(p, state):
    phi = state[1]
    return (0.0 * phi, -p.derived.sigma * p.g * dc.sin(phi))


def energy(p, state):
    """Kinetic and potential energy (T, V) in joules."""
    d = p.derived
    _, phi, x_dot, phi_dot = state
    T = (
        0.5 * d.m_tot * dc.square(x_dot)
        + d.sigma * dc.cos(phi) * x_dot * phi_dot
        + 0.5 * d.J * dc.square(phi_dot)
    )
    V = d.sigma * p.g * dc.cos(phi)
    return T, V


def pure_ode_forces(p, state, u):
    """Coulomb cart friction plus viscous pole friction, with sign(0) = 0."""
    m_tot = p.derived.m_tot
    x_dot, phi_dot = state[2], state[3]
    return (u - m_tot * p.g * p.mu_c * dc.sign(x_dot), -p.mu_p * phi_dot)


def network_input(state, u, angle_input="raw"):
    x, phi, x_dot, phi_dot = state
    if angle_input == "raw":
        return dc.stack([x, phi, x_dot, phi_dot, u])
    if angle_input == "embedded":
        return dc.stack([x, dc.cos(phi), dc.sin(phi), x_dot, phi_dot, u])
    raise InvalidArgument(f"angle_input must be 'raw' or 'embedded', got {angle_input!r}")


def hybrid_forces(p, net, state, u, angle_input="raw"):
    """Learned cart force and viscous pole friction; ``u`` reaches only the network."""
    want = 5 if angle_input == "raw" else 6
    if net.layer_sizes[0] != want or net.layer_sizes[-1] != 1:
        raise InvalidArgument(
            f"force network must map {want} inputs to 1 output, has {net.layer_sizes}"
        )
    out = dc.mlp_forward(net, network_input(state, u, angle_input))
    return (dc.column(out, 0), -p.mu_p * state[3])


def acceleration(p, state, forces):
    """Solve M(q) qdd = Q - C qd - G with the closed-form 2x2 inverse."""
    d = p.derived
    phi, phi_dot = state[1], state[3]
    s, c = dc.sin(phi), dc.cos(phi)
    m12 = d.sigma * c
    det = d.m_tot * d.J - m12 * m12
    det_min = det if isinstance(det, float) else np.min(dc._val(det))
    if det_min < DET_MIN:
        raise NumericFailure(f"mass matrix determinant {det_min:g} below {DET_MIN:g}", where="acceleration")
    r0 = forces[0] + d.sigma * s * dc.square(phi_dot)
    r1 = forces[1] + d.sigma * p.g * s
    x_dd = (d.J * r0 - m12 * r1) / det
    phi_dd = (d.m_tot * r1 - m12 * r0) / det
    return x_dd, phi_dd


def pure_ode_rhs(p):
    """State derivative g(t, z, u) of the friction-parameterized model."""

    def f(t, z, u):
        x_dd, phi_dd = acceleration(p, z, pure_ode_forces(p, z, u))
        return (z[2], z[3], x_dd, phi_dd)

    return f


def hybrid_rhs(p, net, angle_input="raw"):
    """State derivative g(t, z, u) of the model with a learned cart force."""

    def f(t, z, u):
        x_dd, phi_dd = acceleration(p, z, hybrid_forces(p, net, z, u, angle_input))
        return (z[2], z[3], x_dd, phi_dd)

    return f
