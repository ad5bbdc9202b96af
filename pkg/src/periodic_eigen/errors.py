"""Exception hierarchy shared by all modules."""


class PeriodicEigenError(Exception):
    """Base class for errors raised by this package."""


class ExpressionError(PeriodicEigenError):
    pass


class ExpressionSyntaxError(ExpressionError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class ExpressionDomainError(ExpressionError):
    """Evaluation left the domain of an operation.

    ``index`` is the flat index of the first offending sample when the
    expression was evaluated on an array, else None.
    """

    def __init__(self, message: str, subexpression: str, index: int | None = None, location: str = ""):
        super().__init__(f"{message} in {subexpression}{location}")
        self.message = message
        self.subexpression = subexpression
        self.index = index


class NotDifferentiable(ExpressionError):
    pass


class ProblemError(PeriodicEigenError):
    """Problem definition rejected during validation."""


class SolverError(PeriodicEigenError):
    pass


class NonConvergence(SolverError):
    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class PositivityLoss(SolverError):
    """The dominant iterate stopped being one-signed."""


class SingularStep(SolverError):
    pass


class ConeError(PeriodicEigenError):
    """A trial function is not in the positive cone."""
