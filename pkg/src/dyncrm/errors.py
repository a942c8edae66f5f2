"""Exception hierarchy shared by every module."""


class CrmError(Exception):
    """Base class for all errors raised by dyncrm."""


class DomainError(CrmError, ValueError):
    """A parameter or observation lies outside its mathematical domain."""


class InvariantError(DomainError):
    """A state invariant (e.g. severity shape > 1) would be violated."""


class ExistenceError(CrmError, ArithmeticError):
    """An expectation does not exist for the given parameters.

    ``bound`` carries the threshold the offending parameter must stay below.
    """

    def __init__(self, message, bound=None):
        super().__init__(message)
        self.bound = bound


class ConvergenceError(CrmError, RuntimeError):
    """An iterative procedure failed to converge."""


class EstimationError(CrmError):
    """The data cannot identify the requested parameters."""


class GridError(CrmError):
    """A quadrature grid does not hold enough posterior mass."""


class DegeneracyError(CrmError):
    """Particle weights collapsed below the effective-sample-size floor."""


class DataError(CrmError, ValueError):
    """Input data failed validation.

    ``problems`` is a list of ``(line_number, message)`` pairs.
    """

    def __init__(self, message, problems=()):
        self.problems = list(problems)
        if self.problems:
            detail = "; ".join(f"line {ln}: {msg}" for ln, msg in self.problems[:20])
            message = f"{message}: {detail}"
        super().__init__(message)


class BoundaryWarning(UserWarning):
    """Emitted when a q-schedule reaches its degenerate boundary."""
