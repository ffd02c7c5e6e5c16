"""Physics-informed neural ODE models of a cart-pole, trained through RK4."""

from .datagen import Dataset, RigConfig, generate_dataset, read_csv, write_csv
from .diffcore import MLPParams, Tape, Var, check_gradients, mlp_forward, mlp_init
from .estimators import PINODERegressor, PureODERegressor
from .dynamics import PhysicalParams, hybrid_rhs, pure_ode_rhs
from .evaluation import rollout_compare, windowed_errors
from .exceptions import DatasetError, InvalidArgument, NumericFailure
from .integrator import rk4_step, rollout
from .training import LossWeights, TrainConfig, fit_baseline_friction, step_loss, train

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DatasetError",
    "InvalidArgument",
    "LossWeights",
    "MLPParams",
    "NumericFailure",
    "PINODERegressor",
    "PhysicalParams",
    "PureODERegressor",
    "RigConfig",
    "Tape",
    "TrainConfig",
    "Var",
    "check_gradients",
    "fit_baseline_friction",
    "generate_dataset",
    "hybrid_rhs",
    "mlp_forward",
    "mlp_init",
    "pure_ode_rhs",
    "read_csv",
    "rk4_step",
    "rollout",
    "rollout_compare",
    "step_loss",
    "train",
    "windowed_errors",
    "write_csv",
]
