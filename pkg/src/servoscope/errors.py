"""Exception types shared across servoscope."""


class ServoscopeError(Exception):
    """Base class for all package errors."""


class ConfigError(ServoscopeError, ValueError):
    """Invalid configuration value or inconsistent setup."""


class ShapeError(ServoscopeError, ValueError):
    """Array dimensions do not match what an operation expects."""


class NumericError(ServoscopeError, ValueError):
    """Non-finite input or a numerically singular system."""


class FormatError(ServoscopeError, ValueError):
    """A persisted file is malformed or truncated."""


class UsageError(ServoscopeError, ValueError):
    """An operation was applied to a value it does not accept."""


class OutOfViewError(ServoscopeError):
    """A block projects completely outside the camera frame."""


class ProbeError(ServoscopeError):
    """A Jacobian probe motion left the scene unobservable."""


class SingularJacobianError(NumericError):
    """Undamped pseudoinverse requested for a rank-deficient Jacobian."""
