"""Sensor-schedule design for continuous-time stochastic filtering.

The package simulates diffusions observed through a scheduled sensor,
runs the matching filters (a log-domain grid filter for scalar nonlinear
models, a Kalman-Bucy covariance flow for linear-Gaussian ones),
differentiates filtering utilities with respect to the schedule via
backward adjoint passes, and optimizes schedules by projected gradient
descent on the simplex of observation masses.
"""

from .adjoint import (
    AdjointField,
    NonlinearProblem,
    NonlinearUtility,
    gradient_replicate,
    monte_carlo_gradient,
    nonlinear_utility_value,
    run_adjoint,
    terminal_adjoint,
)
from .backend import NUMBA_ENABLED
from .errors import (
    ConfigError,
    GridMismatchError,
    NumericsError,
    SensorSchedError,
    SupportError,
)
from .experiments import (
    make_logistic_problem,
    make_switching_model,
    optimal_tau_dopt,
    run_budget_allocation,
)
from .kalman_bucy import (
    CovariancePath,
    LinearGaussianModel,
    MatrixAdjointPath,
    MatrixUtility,
    adjoint_matrix_backward,
    frobenius,
    integrate_mean,
    integrate_riccati,
    lg_gradient,
    utility_derivative,
    utility_value,
)
from .optimizer import (
    LinearGaussianProblem,
    OptimizationTrace,
    TraceRecord,
    finite_difference_gradient,
    gradient,
    objective,
    optimize,
)
from .schedule import (
    GradientField,
    SensorSchedule,
    TimeGrid,
    gaussian_schedule,
    project_masses,
    project_to_simplex,
    schedule_mass,
    uniform_schedule,
)
from .sde import (
    ObservationModel,
    ObservationPath,
    SignalModel,
    SignalPath,
    empirical_increment_covariance,
    simulate_observations,
    simulate_signal,
)
from .zakai import (
    DensityField,
    LogDensityField,
    SpaceGrid,
    gaussian_density,
    kl_divergence,
    log_zakai_step,
    moments,
    normalize,
    run_filter,
    trapezoid,
)

__version__ = "0.1.0"

__all__ = [
    "AdjointField",
    "ConfigError",
    "CovariancePath",
    "DensityField",
    "GradientField",
    "GridMismatchError",
    "LinearGaussianModel",
    "LinearGaussianProblem",
    "LogDensityField",
    "MatrixAdjointPath",
    "MatrixUtility",
    "NUMBA_ENABLED",
    "NonlinearProblem",
    "NonlinearUtility",
    "NumericsError",
    "ObservationModel",
    "ObservationPath",
    "OptimizationTrace",
    "SensorSchedError",
    "SensorSchedule",
    "SignalModel",
    "SignalPath",
    "SpaceGrid",
    "SupportError",
    "TimeGrid",
    "TraceRecord",
    "__version__",
    "adjoint_matrix_backward",
    "empirical_increment_covariance",
    "finite_difference_gradient",
    "frobenius",
    "gaussian_density",
    "gaussian_schedule",
    "gradient",
    "gradient_replicate",
    "integrate_mean",
    "integrate_riccati",
    "kl_divergence",
    "lg_gradient",
    "log_zakai_step",
    "make_logistic_problem",
    "make_switching_model",
    "moments",
    "monte_carlo_gradient",
    "nonlinear_utility_value",
    "normalize",
    "objective",
    "optimal_tau_dopt",
    "optimize",
    "project_masses",
    "project_to_simplex",
    "run_adjoint",
    "run_budget_allocation",
    "run_filter",
    "schedule_mass",
    "simulate_observations",
    "simulate_signal",
    "terminal_adjoint",
    "trapezoid",
    "uniform_schedule",
    "utility_derivative",
    "utility_value",
]
