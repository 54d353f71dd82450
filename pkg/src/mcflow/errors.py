"""Exception types shared across the package."""


class McflowError(Exception):
    """Base class for all package errors."""


class ConfigError(McflowError):
    """Invalid configuration input (bad key, bad value, inconsistent blocks)."""


class ChartError(McflowError):
    """Point does not satisfy the ambient chart constraint."""


class FrameError(McflowError):
    """Supplied frame fails orthonormality or completeness requirements."""


class DegeneracyError(McflowError):
    """Induced metric is degenerate (or numerically broken) at a node."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class ShapeError(McflowError):
    """Immersion shape incompatible with ambient model or grid topology."""


class InputError(McflowError):
    """Invalid argument outside configuration parsing."""
