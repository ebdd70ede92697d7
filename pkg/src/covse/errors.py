"""Exception types raised by the covse package."""


class CovseError(Exception):
    """Base class for all package errors."""


class DimensionError(CovseError, ValueError):
    """Operand shapes are incompatible."""


class NotHermitianError(CovseError, ValueError):
    """A matrix that must be Hermitian is not."""


class NotPSDError(CovseError, ValueError):
    """A matrix that must be positive semidefinite has a negative eigenvalue."""


class PoleError(CovseError, ValueError):
    """A moment is requested at or beyond its pole (infinite or undefined)."""


class SingularEstimateError(CovseError, ArithmeticError):
    """An estimated covariance matrix cannot be inverted."""


class InvalidRegimeError(CovseError, ArithmeticError):
    """A SINR denominator is non-positive; the modelling assumptions are violated."""


class BudgetExhaustedError(CovseError, ValueError):
    """Pilot overhead leaves no resources for uplink data."""


class ConfigError(CovseError, ValueError):
    """Configuration file or override is invalid."""
