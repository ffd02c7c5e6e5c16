"""Independent reference computations used by several test modules."""

import numpy as np

from pinode.dynamics import acceleration, energy


def lagrangian(p, q, qd):
    T, V = energy(p, (q[0], q[1], qd[0], qd[1]))
    return float(T - V)


def euler_lagrange_residual(p, state, forces, eps=1e-3):
    """Relative residual of d/dt dL/dqd - dL/dq - Q using only energy evaluations.

    The accelerations come from the closed-form solve under test; all
    derivatives of the Lagrangian are central finite differences.
    """
    q = np.array(state[:2], dtype=float)
    qd = np.array(state[2:], dtype=float)
    qdd = np.array([float(a) for a in acceleration(p, tuple(state), forces)])
    L = lambda a, b: lagrangian(p, a, b)  # noqa: E731
    e = np.eye(2) * eps

    def d2(fa, fb, i, j):
        # mixed second derivative; fa/fb select which argument each index perturbs
        def shifted(si, sj):
            a, b = q.copy(), qd.copy()
            for which, k, s in ((fa, i, si), (fb, j, sj)):
                if which == "q":
                    a = a + s * e[k]
                else:
                    b = b + s * e[k]
            return L(a, b)

        return (shifted(1, 1) - shifted(1, -1) - shifted(-1, 1) + shifted(-1, -1)) / (4 * eps * eps)

    H_vv = np.array([[d2("v", "v", i, j) for j in range(2)] for i in range(2)])
    H_vq = np.array([[d2("v", "q", i, j) for j in range(2)] for i in range(2)])
    dL_dq = np.array([(L(q + e[i], qd) - L(q - e[i], qd)) / (2 * eps) for i in range(2)])
    ddt = H_vq @ qd + H_vv @ qdd
    Q = np.array([float(f) for f in forces])
    r = ddt - dL_dq - Q
    scale = np.maximum.reduce([np.abs(H_vv @ qdd), np.abs(H_vq @ qd), np.abs(dL_dq), np.abs(Q), np.full(2, 1e-3)])
    return float(np.max(np.abs(r) / scale)), H_vv


def random_states(n, seed=0):
    rng = np.random.default_rng(seed)
    return np.column_stack(
        [
            rng.uniform(-0.3, 0.3, n),
            rng.uniform(-np.pi, 3 * np.pi, n),
            rng.uniform(-1.5, 1.5, n),
            rng.uniform(-8.0, 8.0, n),
        ]
    )


def energy_by_quadrature(p, state, n=2001):
    """Kinetic and potential energy summed over rod elements plus the tip mass.

    Positions along the pole are r in [0, l]; a point at r sits at
    (x + r sin phi, r cos phi) with phi measured from the upward vertical.
    """
    x, phi, xd, phid = state
    r = np.linspace(0.0, p.l, n)
    w = np.full(n, p.l / (n - 1))
    w[0] = w[-1] = p.l / (2 * (n - 1))  # trapezoid weights
    dm = p.m_p / p.l * w
    vx = xd + r * np.cos(phi) * phid
    vy = -r * np.sin(phi) * phid
    T = 0.5 * p.m_c * xd**2 + 0.5 * np.sum(dm * (vx**2 + vy**2))
    T += 0.5 * p.m_s * ((xd + p.l * np.cos(phi) * phid) ** 2 + (p.l * np.sin(phi) * phid) ** 2)
    V = p.g * (np.sum(dm * r * np.cos(phi)) + p.m_s * p.l * np.cos(phi))
    return T, V


def exact_pure_dataset(p, duration=60.0, seed=0, amplitude=1.0, inner_step=0.02):
    """Dataset of true states from a rig with no effects beyond the baseline model.

    With ``inner_step`` equal to the sample interval the rig integrates with
    exactly the one-step scheme the models use.
    """
    from pinode.datagen import RigConfig, exact_dataset, excitation_signal, simulate_rig

    cfg = RigConfig.ideal(p, inner_step=inner_step)
    u = excitation_signal(duration, cfg.sample_rate, amplitude, seed)
    truth = simulate_rig(cfg, u, (0.0, np.pi, 0.0, 0.0))
    return exact_dataset(truth, cfg.sample_rate)


def adam_reference(theta, grads_seq, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam applied elementwise with Python floats."""
    theta = [float(v) for v in theta]
    m = [0.0] * len(theta)
    v = [0.0] * len(theta)
    for t, g in enumerate(grads_seq, start=1):
        for i, gi in enumerate(g):
            m[i] = b1 * m[i] + (1 - b1) * gi
            v[i] = b2 * v[i] + (1 - b2) * gi * gi
            mh = m[i] / (1 - b1**t)
            vh = v[i] / (1 - b2**t)
            theta[i] -= lr * mh / (vh**0.5 + eps)
    return np.array(theta)
