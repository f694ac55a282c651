"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes (config 1, data 2, numeric 3).
"""


class NilmError(Exception):
    """Base class for all package errors."""


class ConfigError(NilmError, ValueError):
    """Invalid configuration or parameter value."""


class StructuralError(NilmError, ValueError):
    """Array shapes or layer wiring do not fit together."""


class StateError(NilmError, RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class DataError(NilmError, ValueError):
    """Input data is malformed, empty or inconsistent."""


class IntegrityError(DataError):
    """A checkpoint file is truncated, corrupt or of an unsupported version."""


class NumericError(NilmError, FloatingPointError):
    """A non-finite value appeared where it must not (loss, gradient)."""
