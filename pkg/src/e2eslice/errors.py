"""Exception types shared across the package."""


class SlicingError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SlicingError, ValueError):
    """A scenario or spec is inconsistent (e.g. more users than sub-channels)."""


class ScenarioValidationError(ConfigurationError):
    """A scenario file failed schema validation.

    ``line`` is 1-based when the offending node is known.
    """

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class InfiniteDelayError(SlicingError, ArithmeticError):
    """Aggregate rate of a user is zero, so delay and energy are unbounded."""


class UnboundedPowerError(SlicingError, OverflowError):
    """Requested rate needs an astronomically large transmit power."""


class InfeasibleBudgetError(SlicingError):
    """Fixed delay terms already exhaust a user's delay budget."""

    def __init__(self, user, message):
        self.user = user
        super().__init__(message)


class InitializationError(SlicingError):
    """Greedy placement could not host every SFC."""


class PathError(SlicingError):
    """No directed path between two servers that must be chained."""


class RoundingInfeasibleError(SlicingError):
    """A rounded placement violates capacity or delay constraints."""


class NonConvexityError(SlicingError):
    """The barrier solver detected an ascent direction or merit increase."""
