"""Exception types raised across the package."""


class DomainError(ValueError):
    """A price (or other argument) lies outside its admissible set."""


class ValidationError(ValueError):
    """Invalid model or configuration input."""


class PreconditionError(ValueError):
    """An operation was called outside the region where it is defined."""


class SolverError(RuntimeError):
    """Base class for numerical failures."""


class StepSizeUnderflowError(SolverError):
    def __init__(self, tau, h):
        self.tau = tau
        self.h = h
        super().__init__(
            f"time step {h:.3e} fell below the floor at tau={tau:.6g}; "
            "the sigma^2 xi^2 diffusion is too stiff for this grid "
            "(reduce xi_max or n_xi, or lower h_min)"
        )


class NonFiniteSolutionError(SolverError):
    def __init__(self, tau, last_checkpoint, last_values):
        self.tau = tau
        self.last_checkpoint = last_checkpoint
        self.last_values = last_values
        super().__init__(
            f"non-finite values at tau={tau:.6g}; last good checkpoint tau={last_checkpoint:.6g}"
        )


class ConvergenceError(SolverError):
    def __init__(self, iterations, residual):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"Newton iteration did not converge in {iterations} iterations "
            f"(max residual {residual:.3e}); try a larger L or a finer grid"
        )


class PolicyPriceError(SolverError):
    """A pricing policy returned a price outside the admissible interval."""
