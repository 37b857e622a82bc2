"""Exception hierarchy shared across the package."""


class QssLabError(Exception):
    """Base class for all package errors."""


class NetworkError(QssLabError):
    """Inconsistent network topology (dangling branch, islanding, ...)."""


class PowerFlowError(QssLabError):
    """Power flow failed: singular Jacobian or no convergence."""

    def __init__(self, message, iteration=None, mismatch=None):
        super().__init__(message)
        self.iteration = iteration
        self.mismatch = mismatch


class InitializationError(QssLabError):
    """A device cannot be put in equilibrium at the operating point."""

    def __init__(self, message, device=None):
        super().__init__(message)
        self.device = device


class StructureError(QssLabError):
    """State slice or partition sizes do not match the registration."""


class EvaluationError(QssLabError):
    """Residual evaluation produced a non-finite entry."""

    def __init__(self, message, variable=None):
        super().__init__(message)
        self.variable = variable


class SingularityError(QssLabError):
    """Iteration matrix or algebraic block is numerically singular."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ConvergenceError(QssLabError):
    """Newton iteration stagnated."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class CaseError(QssLabError):
    """Case file violates the schema; carries every violation found."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "\n".join(f"  {loc}: {msg}" for loc, msg in self.violations)
        super().__init__(f"{len(self.violations)} case violation(s):\n{lines}")


class ComparisonError(QssLabError):
    """Two trajectories cannot be compared."""
