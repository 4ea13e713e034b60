"""Exception types raised across the package."""


class ValleyWalkError(Exception):
    """Base class for all package errors."""


class NoRoot(ValleyWalkError):
    pass


class Divergent(ValleyWalkError):
    pass


class AssumptionViolation(ValleyWalkError):
    pass


class WindowTooSmall(ValleyWalkError):
    pass


class TruncationUncertified(ValleyWalkError):
    pass


class InsufficientExcursions(ValleyWalkError):
    pass


class DegenerateValley(ValleyWalkError):
    pass


class TooSmall(ValleyWalkError):
    pass


class MethodUnavailable(ValleyWalkError):
    pass


class BudgetExhausted(ValleyWalkError):
    pass


class ConfigError(ValleyWalkError):
    pass
