"""Exception types shared across the package."""


class PermonError(Exception):
    """Base class for all package errors."""


class InfeasibleParamsError(PermonError):
    """Agent parameters violate a trajectory constraint.

    The message names the constraint that failed.
    """


class SpeedBoundError(PermonError):
    """A sampled trajectory exceeds the unit speed bound."""


class UnobservedTargetError(PermonError):
    """A target is never inside any agent's sensing range."""

    def __init__(self, target_index, message=None):
        self.target_index = target_index
        super().__init__(
            message or f"target {target_index} is never observed (eta is zero "
            "over the whole period)"
        )


class DivergenceError(PermonError):
    """Numerical integration produced non-finite values."""


class CycleConvergenceError(PermonError):
    """Picard iteration on the periodic Riccati equation did not converge."""

    def __init__(self, target_index, residuals, message=None):
        self.target_index = target_index
        self.residuals = list(residuals)
        super().__init__(
            message or f"limit cycle for target {target_index} did not reach "
            f"tolerance in {len(self.residuals)} cycles "
            f"(last residual {self.residuals[-1]:.3e})"
        )


class SteinUniquenessError(PermonError):
    """The periodic sensitivity Stein equation has no unique solution."""


class DescentAbortedError(PermonError):
    """Gradient descent halted mid-run; carries the partial history."""

    def __init__(self, history, cause, iteration):
        self.history = history
        self.cause = cause
        self.iteration = iteration
        super().__init__(f"descent aborted at iteration {iteration}: {cause}")
