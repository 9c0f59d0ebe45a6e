"""Exception types raised across the package."""


class CpanError(Exception):
    """Base class for all package errors."""


class ConfigError(CpanError, ValueError):
    """Invalid or inconsistent configuration."""


class NumericalError(CpanError, ArithmeticError):
    """A numerical routine failed to produce a trustworthy result."""


class StepTooLarge(NumericalError):
    pass


class AliasingRisk(NumericalError):
    pass


class GridTooSmall(ConfigError):
    pass


class QuadratureNotConverged(NumericalError):
    pass


class SingularCovariance(NumericalError):
    pass


class NotPSD(NumericalError):
    pass


class NoBracket(NumericalError):
    pass


class DegenerateSum(NumericalError):
    pass


class NotPD(NumericalError):
    pass


class WeightUnderflow(NumericalError):
    pass


class InsufficientCurveSupport(NumericalError):
    pass
