"""scikit-learn style wrappers around the two cart-pole models.

Both estimators learn a one-step map. Rows of ``X`` are
``[x, phi, x_dot, phi_dot, u]`` and rows of ``y`` the measured state one
sample interval later.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import diffcore as dc
from .dynamics import PhysicalParams, hybrid_rhs, pure_ode_rhs
from .integrator import rk4_step, rollout
from .training import LossWeights, TrainConfig, fit_baseline_friction, train

__all__ = ["PINODERegressor", "PureODERegressor"]


def _split(X, y=None):
    if y is None:
        X = check_array(X, dtype=np.float64)
    else:
        X, y = check_X_y(X, y, dtype=np.float64, multi_output=True)
        if y.ndim != 2 or y.shape[1] != 4:
            raise ValueError(f"y must have 4 columns (x, phi, x_dot, phi_dot), got shape {y.shape}")
    if X.shape[1] != 5:
        raise ValueError(f"X must have 5 columns (x, phi, x_dot, phi_dot, u), got {X.shape[1]}")
    return X[:, :4], X[:, 4], y


class _CartPoleBase(RegressorMixin, BaseEstimator):
    def _rhs(self):
        raise NotImplementedError

    def predict(self, X):
        """State one sample interval after each row of ``X``."""
        check_is_fitted(self)
        states, u, _ = _split(X)
        return rk4_step(self._rhs(), 0.0, states, u, 1.0 / self.sample_rate)

    def simulate(self, z0, controls):
        """Open-loop rollout from ``z0``; returns (len(controls) + 1, 4)."""
        check_is_fitted(self)
        z0 = np.asarray(z0, dtype=np.float64)
        return rollout(self._rhs(), z0, controls, 1.0 / self.sample_rate)


class PureODERegressor(_CartPoleBase):
    """Friction-parameterized model with least-squares (mu_c, mu_p).

    Parameters
    ----------
    physical_params : PhysicalParams, optional
        Fixed masses and length; friction values in it are ignored by ``fit``.
    sample_rate : float
        Samples per second of the training data.
    """

    def __init__(self, physical_params=None, sample_rate=50.0, mu_c_max=0.3, mu_p_max=0.05):
        self.physical_params = physical_params
        self.sample_rate = sample_rate
        self.mu_c_max = mu_c_max
        self.mu_p_max = mu_p_max

    def fit(self, X, y):
        states, u, y = _split(X, y)
        p = self.physical_params or PhysicalParams()
        mu_c, mu_p = fit_baseline_friction(
            p,
            (states, u[:, None], y[:, None, :]),
            h=1.0 / self.sample_rate,
            mu_c_max=self.mu_c_max,
            mu_p_max=self.mu_p_max,
        )
        self.mu_c_, self.mu_p_ = mu_c, mu_p
        self.params_ = p.replace(mu_c=mu_c, mu_p=mu_p)
        self.n_features_in_ = 5
        return self

    def _rhs(self):
        return pure_ode_rhs(self.params_)


class PINODERegressor(_CartPoleBase):
    """Equations of motion with a learned cart force, trained through RK4.

    Parameters
    ----------
    physical_params : PhysicalParams, optional
        Masses, length and pole friction used by the physics part.
    hidden_layers : tuple of int
        Widths of the hidden ReLU layers.
    angle_input : {"raw", "embedded"}
        Feed the network the angle itself or its cosine and sine.
    random_state : int
        Seeds both the weight initialisation and the shuffling.
    """

    def __init__(
        self,
        physical_params=None,
        hidden_layers=(50, 50, 50),
        output_scale=10.0,
        angle_input="raw",
        learning_rate=1e-3,
        batch_size=128,
        epochs=100,
        lambda_q=(1.0, 1.0),
        lambda_qdot=(1.0, 1.0),
        sample_rate=50.0,
        random_state=0,
    ):
        self.physical_params = physical_params
        self.hidden_layers = hidden_layers
        self.output_scale = output_scale
        self.angle_input = angle_input
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.lambda_q = lambda_q
        self.lambda_qdot = lambda_qdot
        self.sample_rate = sample_rate
        self.random_state = random_state

    def fit(self, X, y):
        states, u, y = _split(X, y)
        if self.angle_input not in ("raw", "embedded"):
            raise ValueError(f"angle_input must be 'raw' or 'embedded', got {self.angle_input!r}")
        width = 5 if self.angle_input == "raw" else 6
        sizes = [width, *self.hidden_layers, 1]
        ss = np.random.SeedSequence(self.random_state)
        init_seed, train_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
        net = dc.mlp_init(sizes, self.output_scale, seed=init_seed)
        cfg = TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=min(self.batch_size, states.shape[0]),
            epochs=self.epochs,
            seed=train_seed,
            loss_weights=LossWeights(self.lambda_q, self.lambda_qdot),
        )
        p = self.physical_params or PhysicalParams()
        report = train(
            p, (states, u[:, None], y[:, None, :]), cfg, net, self.angle_input, h=1.0 / self.sample_rate
        )
        self.net_ = report.params
        self.loss_history_ = list(report.history)
        self.params_ = p
        self.n_features_in_ = 5
        return self

    def _rhs(self):
        return hybrid_rhs(self.params_, self.net_, self.angle_input)
