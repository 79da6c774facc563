"""Exception hierarchy shared by the library and the CLI.

The CLI maps :class:`ConfigError` and :class:`ShapeError` (and IO problems) to
exit code 2, and :class:`NumericalError` to exit code 3.
"""


class CurveflowError(Exception):
    """Base class for all library errors."""


class ConfigError(CurveflowError, ValueError):
    """Invalid configuration, argument, or domain violation."""


class ShapeError(CurveflowError, ValueError):
    """Array dimensions do not compose."""


class NumericalError(CurveflowError, ArithmeticError):
    """A non-finite value appeared during a computation.

    Attributes:
        index: layer index, sample index or step index where the failure was
            detected (meaning depends on the raising site), or ``None``.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class UnsupportedOperation(CurveflowError):
    """The requested operation is not defined for this configuration."""


class CheckpointError(CurveflowError, OSError):
    """Checkpoint file is unreadable, corrupt, or of the wrong role."""
