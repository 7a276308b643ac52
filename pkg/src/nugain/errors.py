"""Exception hierarchy shared by all modules."""


class NugainError(Exception):
    """Base class for toolkit errors."""


class DomainError(NugainError, ValueError):
    """An argument lies outside the domain where the operation is defined."""


class EvaluationError(NugainError, ArithmeticError):
    """A user-supplied function returned a non-finite value."""

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class InvariantViolation(NugainError):
    """A declared structural property (monotonicity, class K, ...) failed on samples."""


class ConfigurationError(NugainError, ValueError):
    """Required inputs are missing or inconsistent."""


class IntegrationError(NugainError):
    """The ODE integrator met a non-finite derivative."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class MonotonicityError(NugainError):
    """The wandering output h(z(t)) increased beyond tolerance."""


class StateError(NugainError):
    """Identifier state became non-finite."""


class OptimizerError(NugainError):
    """Minimization did not converge; carries the best point found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
