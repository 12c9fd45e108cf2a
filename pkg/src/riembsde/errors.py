"""Exception types shared across the package."""


class DomainError(ValueError):
    """A point lies outside the region where an operation is defined."""


class DomainExitError(DomainError):
    """A geodesic left the chart domain before reaching parameter 1."""

    def __init__(self, message, t_exit):
        super().__init__(message)
        self.t_exit = t_exit


class ConvergenceError(RuntimeError):
    """An iterative solve stopped without meeting its tolerance."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class BasisError(RuntimeError):
    """The regression design matrix is too ill-conditioned to solve."""


class EvaluationError(ValueError):
    """A drift returned a non-finite value; ``witness`` holds the offending input."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class PropertyViolation(AssertionError):
    """An empirical check found no finite constant; ``witness`` holds a sample."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class SimulationError(RuntimeError):
    """A forward SDE coefficient was non-finite; ``step`` is the time index."""

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step
