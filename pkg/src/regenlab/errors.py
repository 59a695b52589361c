"""Exception hierarchy shared by all regenlab modules."""


class RegenlabError(Exception):
    """Base class for every error raised by the package."""


class DomainError(RegenlabError, ValueError):
    """An argument lies outside the domain of the operation."""


class PreconditionError(RegenlabError, ValueError):
    """The inputs are valid values but violate a documented precondition."""


class UnsupportedFamilyError(RegenlabError, TypeError):
    """The operation is not defined for this Lévy family or diffeomorphism."""


class QuadratureError(RegenlabError, ArithmeticError):
    """Numerical integration failed to reach the requested tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class PrecisionError(RegenlabError, ArithmeticError):
    """Extended-precision evaluation could not certify the requested accuracy."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class HorizonExceededError(RegenlabError, RuntimeError):
    """A stop rule was not met before the jump-count cap.

    The partially simulated path is attached as ``partial``.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class UnresolvedRegionError(RegenlabError, ValueError):
    """A sample point lies beyond the resolved frontier of a gap set."""

    def __init__(self, message, frontier=None, max_point=None):
        super().__init__(message)
        self.frontier = frontier
        self.max_point = max_point
