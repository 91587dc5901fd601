"""Steady-state optimal periodic trajectories for persistent monitoring of
targets on a line: periodic Riccati limit cycles, exact cost gradients, and
projected gradient descent over bang-dwell agent schedules."""

from .errors import (CycleConvergenceError, DescentAbortedError,
                     DivergenceError, InfeasibleParamsError, PermonError,
                     SpeedBoundError, SteinUniquenessError,
                     UnobservedTargetError)
from .ipa import GradientBundle, cost_gradient, solve_stein
from .model import (AgentParams, Scenario, TargetModel, snr_diagnostic,
                    validate_scenario)
from .optimizer import DescentConfig, DescentHistory, descend, project
from .riccati import (CovarianceCycle, Numerics, evaluate, limit_cycle,
                      steady_state_cost)
from .trajectory import (compile_schedule, eta, eta_sensitivities,
                         improve_policy, position, position_sensitivities)
from .validate import (McConfig, finite_difference_gradient, gradient_check,
                       kalman_bucy_monte_carlo, monotonicity_harness)

__version__ = "0.1.0"

__all__ = [
    "AgentParams", "CovarianceCycle", "CycleConvergenceError",
    "DescentAbortedError", "DescentConfig", "DescentHistory",
    "DivergenceError", "GradientBundle", "InfeasibleParamsError", "McConfig",
    "Numerics", "PermonError", "Scenario", "SpeedBoundError",
    "SteinUniquenessError", "TargetModel", "UnobservedTargetError",
    "compile_schedule", "cost_gradient", "descend", "eta",
    "eta_sensitivities", "evaluate", "finite_difference_gradient",
    "gradient_check", "improve_policy", "kalman_bucy_monte_carlo",
    "limit_cycle", "monotonicity_harness", "position",
    "position_sensitivities", "project", "snr_diagnostic",
    "solve_stein", "steady_state_cost", "validate_scenario",
]
