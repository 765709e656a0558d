"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so keep the classes coarse.
"""


class SemcomError(Exception):
    """Base class for all package errors."""


class ShapeError(SemcomError, ValueError):
    """Tensor shapes do not satisfy an operation's contract."""

    def __init__(self, message, layer_index=None, expected=None, actual=None):
        super().__init__(message)
        self.layer_index = layer_index
        self.expected = expected
        self.actual = actual


class NumericError(SemcomError, ArithmeticError):
    """NaN/Inf or an otherwise undefined numeric operation."""


class ProtocolError(SemcomError):
    """Malformed frame, CRC mismatch, or an out-of-order message."""


class TransportError(ProtocolError):
    """The underlying byte stream failed or closed early."""


class ConfigError(SemcomError, ValueError):
    """Invalid run configuration."""


class DatasetError(SemcomError, ValueError):
    """Malformed or inconsistent dataset file."""
