"""Exception types shared across the package."""


class IcareError(Exception):
    """Base class for all package errors."""


class DimensionError(IcareError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigurationError(IcareError, ValueError):
    """A layer or run configuration cannot produce a valid result."""


class UsageError(IcareError, RuntimeError):
    """An API was called in a state or mode that does not support it."""


class NonFiniteError(IcareError, FloatingPointError):
    """NaN or Inf reached a layer boundary."""


class FormatError(IcareError, ValueError):
    """A binary or text artifact on disk is malformed."""
