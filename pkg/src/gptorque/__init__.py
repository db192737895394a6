"""Computed-torque control with GP residual compensation and variance-scheduled gains.

The package splits along the experiment pipeline: ``gp`` (exact regression
with marginalized variances), ``dynamics`` (two-link plant and unknown
torques), ``control`` (the control law and gain schedule), ``stability``
(probabilistic error bounds and Lyapunov constants), ``simulate``
(integration, metrics, the comparison experiment), ``config`` and ``cli``
(JSON-driven runs).
"""

from .config import ExperimentConfig, bundled_config_path
from .control import (
    ComputedTorqueController,
    ControlOutput,
    GainSchedule,
    gains_from_variance,
    tracking_error,
)
from .dynamics import (
    TwoLinkPlanarArm,
    UnknownDynamics,
    estimate_bounds,
    forward_dynamics,
    gp_mean_dynamics,
    sine_abs_dynamics,
    zero_dynamics,
)
from .errors import ConfigError, DivergenceError, NumericalError
from .gp import (
    GPModel,
    Hyperparameters,
    Prediction,
    TrainingSet,
    fit,
    log_marginal_likelihood,
    optimize_hyperparameters,
)
from .simulate import (
    ComparisonResult,
    SimulationResult,
    TrajectorySpec,
    generate_training_data,
    integrate,
    metrics,
    run_comparison,
    stability_report,
    train_model,
)
from .stability import (
    EpsilonInterval,
    ErrorBoundParams,
    LyapunovConstants,
    SystemBounds,
    compute_beta,
    convergence_constants,
    epsilon_feasible,
    information_gain,
    lyapunov_value,
    model_error_bound,
)

__version__ = "0.1.0"

__all__ = [
    "ComparisonResult",
    "ComputedTorqueController",
    "ConfigError",
    "ControlOutput",
    "DivergenceError",
    "EpsilonInterval",
    "ErrorBoundParams",
    "ExperimentConfig",
    "GPModel",
    "GainSchedule",
    "Hyperparameters",
    "LyapunovConstants",
    "NumericalError",
    "Prediction",
    "SimulationResult",
    "SystemBounds",
    "TrainingSet",
    "TrajectorySpec",
    "TwoLinkPlanarArm",
    "UnknownDynamics",
    "bundled_config_path",
    "compute_beta",
    "convergence_constants",
    "epsilon_feasible",
    "estimate_bounds",
    "fit",
    "forward_dynamics",
    "gains_from_variance",
    "generate_training_data",
    "gp_mean_dynamics",
    "information_gain",
    "integrate",
    "log_marginal_likelihood",
    "lyapunov_value",
    "metrics",
    "model_error_bound",
    "optimize_hyperparameters",
    "run_comparison",
    "sine_abs_dynamics",
    "stability_report",
    "tracking_error",
    "train_model",
    "zero_dynamics",
]
