"""Exception hierarchy shared by every hedgelab module."""


class HedgeLabError(Exception):
    """Base class for all library errors."""


class DomainError(HedgeLabError, ValueError):
    """An argument lies outside the domain of an operation."""


class UnsupportedOrderError(DomainError):
    pass


class DegenerateError(DomainError):
    """A quantity that must be non-degenerate (volatility, variance, ...) vanished."""


class StabilityError(HedgeLabError):
    """Explicit finite-difference scheme violates its stability bound."""


class NumericError(HedgeLabError, ArithmeticError):
    pass


class SingularSystemError(NumericError):
    pass


class ExactRegimeError(HedgeLabError):
    """Finite-difference errors are at round-off level, so no order can be fitted."""


class ModelConditionError(HedgeLabError):
    """The model violates a pricing condition required by a variance formula."""


class OptimizationError(HedgeLabError):
    pass


class WeightOverflowError(NumericError, OverflowError):
    pass


class ConfigError(HedgeLabError):
    """Base for configuration problems (exit code 2 in the CLI)."""


class ConfigSyntaxError(ConfigError):
    pass


class ConfigSchemaError(ConfigError):
    pass


class ConfigValidationError(ConfigError):
    pass
