"""Fitting the learned cart force and the friction-parameterized baseline."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffcore as dc
from .dynamics import hybrid_rhs, pure_ode_rhs
from .exceptions import InvalidArgument, NumericFailure
from .integrator import rk4_step_components

log = logging.getLogger(__name__)

__all__ = [
    "LossWeights",
    "TrainConfig",
    "TrainReport",
    "AdamState",
    "adam_step",
    "angle_residual_sq",
    "transition_batch",
    "predict_steps",
    "step_loss",
    "train",
    "baseline_loss",
    "fit_baseline_friction",
    "synthetic_batch",
]

TWO_PI = 2.0 * math.pi


@dataclass
class LossWeights:
    lambda_q: tuple = (1.0, 1.0)
    lambda_qdot: tuple = (1.0, 1.0)

    def __post_init__(self):
        self.lambda_q = tuple(float(v) for v in self.lambda_q)
        self.lambda_qdot = tuple(float(v) for v in self.lambda_qdot)
        ws = self.lambda_q + self.lambda_qdot
        if len(self.lambda_q) != 2 or len(self.lambda_qdot) != 2:
            raise InvalidArgument("loss weights come in pairs: (x, phi) and (x_dot, phi_dot)")
        if any(not w >= 0 for w in ws) or not any(w > 0 for w in ws):
            raise InvalidArgument(f"loss weights must be >= 0 with at least one > 0, got {ws}")

    def scaled(self, c):
        return LossWeights(tuple(c * w for w in self.lambda_q), tuple(c * w for w in self.lambda_qdot))


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 100
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    horizon: int = 1

    def __post_init__(self):
        if isinstance(self.loss_weights, dict):
            self.loss_weights = LossWeights(**self.loss_weights)
        if not self.learning_rate > 0:
            raise InvalidArgument("learning_rate must be positive")
        if int(self.batch_size) < 1 or int(self.horizon) < 1 or int(self.epochs) < 0:
            raise InvalidArgument("batch_size and horizon must be >= 1, epochs >= 0")
        self.batch_size, self.horizon, self.epochs = int(self.batch_size), int(self.horizon), int(self.epochs)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainReport:
    history: list
    params: dc.MLPParams
    duration: float
    config: TrainConfig
    steps: int = 0

    def to_dict(self, wall_clock=True):
        d = {
            "history": [float(v) for v in self.history],
            "steps": self.steps,
            "config": self.config.to_dict(),
        }
        if wall_clock:
            d["duration_s"] = self.duration
        return d


# ---------------------------------------------------------------------------
# loss


def _wrap(phi):
    """Reduce an angle into [0, 2pi); derivative is one almost everywhere."""
    if isinstance(phi, dc.Var):
        return phi - (phi.value - np.remainder(phi.value, TWO_PI))
    return np.remainder(phi, TWO_PI)


def angle_residual_sq(phi_a, phi_b):
    """Squared distance between (cos, sin) embeddings of two angles."""
    a, b = _wrap(phi_a), _wrap(phi_b)
    return dc.square(dc.cos(a) - dc.cos(b)) + dc.square(dc.sin(a) - dc.sin(b))


def _weighted_residual(pred, target, w):
    lx, lphi = w.lambda_q
    lxd, lphid = w.lambda_qdot
    terms = []
    if lx:
        terms.append(lx * dc.square(pred[0] - target[..., 0]))
    if lphi:
        terms.append(lphi * angle_residual_sq(pred[1], target[..., 1]))
    if lxd:
        terms.append(lxd * dc.square(pred[2] - target[..., 2]))
    if lphid:
        terms.append(lphid * dc.square(pred[3] - target[..., 3]))
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def transition_batch(batch):
    """Normalise a batch to arrays (states (B,4), controls (B,H), targets (B,H,4)).

    Accepts either that triple of arrays or a list of ``(state, u, next_state)``
    tuples (horizon one).
    """
    if isinstance(batch, tuple) and len(batch) == 3 and isinstance(batch[0], np.ndarray):
        states, controls, targets = (np.asarray(a, dtype=np.float64) for a in batch)
    else:
        batch = list(batch)
        if not batch:
            raise InvalidArgument("empty batch")
        states = np.array([np.asarray(s, dtype=np.float64) for s, _, _ in batch])
        controls = np.array([[float(u)] for _, u, _ in batch])
        targets = np.array([[np.asarray(n, dtype=np.float64)] for _, _, n in batch])
    if states.ndim != 2 or states.shape[0] == 0:
        raise InvalidArgument("empty batch")
    if controls.ndim == 1:
        controls = controls[:, None]
    if targets.ndim == 2:
        targets = targets[:, None, :]
    if states.shape[1] != 4 or targets.shape[-1] != 4 or controls.shape[:2] != targets.shape[:2]:
        raise InvalidArgument(
            f"inconsistent batch shapes {states.shape}, {controls.shape}, {targets.shape}"
        )
    return states, controls, targets


def predict_steps(f, states, controls, h):
    """Roll ``f`` forward over the control columns; yields the state tuple after each step."""
    z = tuple(states[:, i] for i in range(4))
    for k in range(controls.shape[1]):
        z = rk4_step_components(f, k * h, z, controls[:, k], h)
        yield z


def _trajectory_loss(f, batch, w, h):
    states, controls, targets = transition_batch(batch)
    loss = None
    for k, z in enumerate(predict_steps(f, states, controls, h)):
        term = dc.mean(_weighted_residual(z, targets[:, k, :], w))
        loss = term if loss is None else loss + term
    return loss / controls.shape[1]


def step_loss(p, net, batch, w=None, h=0.02, angle_input="raw"):
    """Weighted one-step (or multi-step) prediction loss of the hybrid model.

    Differentiable with respect to ``net`` when its arrays are recorded.
    """
    w = w or LossWeights()
    return _trajectory_loss(hybrid_rhs(p, net, angle_input), batch, w, h)


def baseline_loss(p, batch, w=None, h=0.02):
    """The same loss for the friction-parameterized model."""
    return float(_trajectory_loss(pure_ode_rhs(p), batch, w or LossWeights(), h))


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params):
        n = params.n_params
        return cls(np.zeros(n), np.zeros(n))


def adam_step(opt_state, params, grads, lr=1e-3):
    g = grads.to_vector()
    if g.shape != opt_state.m.shape or params.n_params != g.size:
        raise InvalidArgument(
            f"gradient of size {g.size} does not match optimiser state {opt_state.m.size}"
            f" / parameters {params.n_params}"
        )
    b1, b2 = opt_state.beta1, opt_state.beta2
    t = opt_state.t + 1
    m = b1 * opt_state.m + (1.0 - b1) * g
    v = b2 * opt_state.v + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    theta = params.to_vector() - lr * m_hat / (np.sqrt(v_hat) + opt_state.eps)
    new_state = AdamState(m, v, t, b1, b2, opt_state.eps)
    return new_state, params.from_vector(theta)


# ---------------------------------------------------------------------------
# training loop


def _transitions(data, horizon, h):
    """(batch arrays, step size) from a Dataset or an explicit transition triple."""
    if hasattr(data, "transitions"):
        return data.transitions(horizon), h or 1.0 / data.sample_rate
    if h is None:
        raise InvalidArgument("a step size h is required with raw transition arrays")
    states, controls, targets = transition_batch(tuple(np.asarray(a, dtype=np.float64) for a in data))
    if controls.shape[1] != horizon:
        raise InvalidArgument(f"transitions have horizon {controls.shape[1]}, config asks for {horizon}")
    return (states, controls, targets), h


def train(p, dataset, cfg, net=None, angle_input="raw", callback=None, h=None):
    """Minimise the prediction loss over the network weights with Adam.

    ``dataset`` is a :class:`~pinode.datagen.Dataset` or a triple of arrays
    (states, controls, targets) together with ``h``. Transitions are
    reshuffled every epoch with a generator seeded from ``cfg.seed``; the
    result is reproducible for a fixed seed.
    """
    if net is None:
        raise InvalidArgument("train needs an initialised force network")
    batches_src, h = _transitions(dataset, cfg.horizon, h)
    n = batches_src[0].shape[0]
    if n < cfg.batch_size:
        raise InvalidArgument(
            f"dataset has {n} transitions, fewer than one batch of {cfg.batch_size}"
        )
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7A11]))
    opt = AdamState.zeros(net)
    net = net.copy()
    history = []
    step = 0
    started = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            batch = tuple(a[idx] for a in batches_src)
            try:
                value, grads = dc.value_and_gradient(
                    lambda theta: step_loss(p, theta, batch, cfg.loss_weights, h, angle_input), net
                )
            except NumericFailure as e:
                raise NumericFailure(f"training step {step}: {e}", where=step) from e
            if not math.isfinite(value):
                raise NumericFailure(f"non-finite loss at training step {step}", where=step)
            opt, net = adam_step(opt, net, grads, cfg.learning_rate)
            total += value * len(idx)
            count += len(idx)
            step += 1
        history.append(total / count)
        log.info("epoch %d/%d  loss %.6g", epoch + 1, cfg.epochs, history[-1])
        if callback is not None:
            callback(epoch, history[-1], net)
    return TrainReport(history, net, time.perf_counter() - started, cfg, step)


# ---------------------------------------------------------------------------
# baseline friction fit

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _minimise_1d(fn, lo, hi, grid=11, tol=1e-9):
    """Grid scan then golden-section refinement around the best grid point."""
    xs = np.linspace(lo, hi, grid)
    vals = [fn(x) for x in xs]
    i = int(np.argmin(vals))
    a, b = xs[max(i - 1, 0)], xs[min(i + 1, grid - 1)]
    c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fn(d)
    candidates = [(vals[i], xs[i]), (fc, c), (fd, d)]
    best_val, best_x = min(candidates)
    return float(best_x), float(best_val)


def fit_baseline_friction(p, dataset, h=None, w=None, mu_c_max=0.3, mu_p_max=0.05):
    """Least-squares friction factors (mu_c, mu_p) for the baseline model.

    Minimises the one-step prediction loss with a nested scalar search; the
    friction values already in ``p`` are ignored. ``dataset`` may also be a
    (states, controls, targets) triple, in which case ``h`` is required.
    """
    if hasattr(dataset, "transitions") and len(dataset) < 2:
        raise InvalidArgument("dataset must contain at least one transition")
    batch, h = _transitions(dataset, 1, h)
    w = w or LossWeights()

    def inner(mu_c):
        return _minimise_1d(
            lambda mu_p: baseline_loss(p.replace(mu_c=mu_c, mu_p=mu_p), batch, w, h),
            0.0,
            mu_p_max,
            tol=1e-7,
        )

    mu_c, _ = _minimise_1d(lambda mu_c: inner(mu_c)[1], 0.0, mu_c_max, tol=1e-6)
    mu_p, _ = inner(mu_c)
    return mu_c, mu_p


def synthetic_batch(p, size, h=0.02, seed=0):
    """Random states and controls with targets one pure-ODE step ahead plus noise.

    Meant for gradient checks and smoke tests, not for training.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBA7C]))
    states = np.column_stack(
        [
            rng.uniform(-0.3, 0.3, size),
            rng.uniform(0.0, TWO_PI, size),
            rng.uniform(-1.0, 1.0, size),
            rng.uniform(-5.0, 5.0, size),
        ]
    )
    controls = rng.uniform(-1.0, 1.0, (size, 1))
    nxt = rk4_step_components(pure_ode_rhs(p), 0.0, tuple(states.T), controls[:, 0], h)
    targets = np.column_stack(nxt) + rng.normal(0.0, 1e-3, (size, 4))
    return states, controls, targets[:, None, :]
