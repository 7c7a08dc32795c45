"""Exception types raised across the package."""


class KinsplitError(Exception):
    """Base class for all package errors."""


class NonFiniteEvaluation(KinsplitError):
    pass


class RangeEmpty(KinsplitError):
    pass


class InvalidExponent(KinsplitError):
    pass


class GridMismatch(KinsplitError):
    pass


class NonPositiveWidth(KinsplitError):
    pass


class CflViolation(KinsplitError):
    pass


class NonFiniteState(KinsplitError):
    pass


class QuadratureRangeExceeded(KinsplitError):
    pass


class MissingAccumulators(KinsplitError):
    pass


class ResolutionTooCoarse(KinsplitError):
    pass


class HorizonNotReached(KinsplitError):
    """Internal logic failure: the partition did not end at the horizon."""


class ConfigError(KinsplitError):
    """Config parse error carrying line/key context."""

    def __init__(self, message, *, key=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.key = key
        self.line = line
