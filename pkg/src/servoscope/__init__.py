"""Learn a visual task function from demonstrations and servo with it."""
from .errors import (ConfigError, FormatError, NumericError, OutOfViewError, ProbeError,
                     ServoscopeError, ShapeError, SingularJacobianError, UsageError)

__version__ = "0.1.0"
