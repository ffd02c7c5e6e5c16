import math

import numpy as np
import pytest

from pinode.dynamics import PhysicalParams, energy, pure_ode_rhs
from pinode.exceptions import InvalidArgument, NumericFailure
from pinode.integrator import rk4_step, rollout

FRICTIONLESS = PhysicalParams().frictionless()


def zero(t, z, u):
    return tuple(0.0 * c for c in z)


def test_zero_field_keeps_state():
    z = np.array([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(rk4_step(zero, 0.0, z, 0.0, 0.1), z)


def test_constant_field():
    c = (1.0, -2.0, 0.5, 3.0)
    out = rk4_step(lambda t, z, u: c, 0.0, np.zeros(4), 0.0, 0.1)
    np.testing.assert_allclose(out, 0.1 * np.array(c))


def test_linear_ode_taylor_truncation():
    h = 0.1
    (out,) = rk4_step(lambda t, z, u: (z[0],), 0.0, (1.0,), 0.0, h)
    assert out == pytest.approx(1 + h + h**2 / 2 + h**3 / 6 + h**4 / 24, rel=1e-15)
    assert out == pytest.approx(1.1051708333333, rel=1e-12)


def test_cubic_in_time_is_exact():
    # Simpson-weighted stages integrate polynomials of degree 3 in t exactly
    (out,) = rk4_step(lambda t, z, u: (4 * t**3,), 0.5, (0.0,), 0.0, 0.3)
    assert out == pytest.approx(0.8**4 - 0.5**4, rel=1e-13)


def test_control_held_over_step():
    seen = []

    def f(t, z, u):
        seen.append(u)
        return (u,)

    (out,) = rk4_step(f, 0.0, (0.0,), 2.5, 0.2)
    assert seen == [2.5] * 4 and out == pytest.approx(0.5)


@pytest.mark.parametrize("h", [0.0, -0.01])
def test_non_positive_step(h):
    with pytest.raises(InvalidArgument):
        rk4_step(zero, 0.0, np.zeros(4), 0.0, h)


def test_non_finite_stage_reported():
    def f(t, z, u):
        return (np.inf if t > 0 else 1.0,)

    with pytest.raises(NumericFailure, match="k2"):
        rk4_step(f, 0.0, (0.0,), 0.0, 0.1)


def test_rollout_shapes_and_constant_trajectory():
    traj = rollout(zero, np.array([0.1, 3.0, 0.0, 0.0]), np.ones(7), 0.02)
    assert traj.shape == (8, 4)
    assert np.all(traj == traj[0])


def test_rollout_batch():
    z0 = np.array([[0.0, 3.0, 0.0, 0.0], [0.1, 2.0, 0.0, 1.0]])
    controls = np.zeros((5, 2))
    batch = rollout(pure_ode_rhs(FRICTIONLESS), z0, controls, 0.02)
    assert batch.shape == (6, 2, 4)
    for i in range(2):
        single = rollout(pure_ode_rhs(FRICTIONLESS), z0[i], controls[:, i], 0.02)
        np.testing.assert_allclose(batch[:, i], single, rtol=1e-14, atol=1e-15)


def test_rollout_needs_controls():
    with pytest.raises(InvalidArgument):
        rollout(zero, np.zeros(4), [], 0.02)


def test_rollout_reports_failing_step():
    def f(t, z, u):
        return (np.inf,) if t >= 0.05 else (1.0,)

    with pytest.raises(NumericFailure, match="rollout step 2"):
        rollout(f, np.zeros(1), np.zeros(5), 0.02)


def total_energy(p, traj):
    T, V = energy(p, tuple(traj.T))
    return T + V


def test_energy_conserved_short_run():
    traj = rollout(pure_ode_rhs(FRICTIONLESS), np.array([0.0, math.pi - 0.1, 0.0, 0.0]), np.zeros(100), 0.02)
    E = total_energy(FRICTIONLESS, traj)
    assert np.max(np.abs(E - E[0])) < 1e-6


def endpoint(h, z0, horizon=1.0):
    n = int(round(horizon / h))
    return rollout(pure_ode_rhs(FRICTIONLESS), z0, np.zeros(n), h)[-1]


@pytest.mark.parametrize("z0", [(0.0, math.pi - 0.3, 0.0, 0.0), (0.0, math.pi - 0.5, 0.2, 0.5)])
def test_fourth_order_convergence(z0):
    z0 = np.array(z0)
    h = 0.01
    ref = endpoint(h / 16, z0)
    e1 = np.linalg.norm(endpoint(h, z0) - ref)
    e2 = np.linalg.norm(endpoint(h / 2, z0) - ref)
    assert 12 <= e1 / e2 <= 20
