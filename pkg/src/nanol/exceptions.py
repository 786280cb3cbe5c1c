"""Exception types raised across the package."""


class NanoLError(Exception):
    """Base class for all package errors."""


class AngleNearPi(NanoLError, ValueError):
    """Rotation angle too close to pi for a well-defined logarithm."""


class NotPSD(NanoLError, ValueError):
    """A covariance could not be factorized even after jitter."""


class SingularGamma(NanoLError, ValueError):
    """Measurement noise covariance is numerically singular."""


class LengthMismatch(NanoLError, ValueError):
    """Two series that must be aligned have different lengths."""


class WindowTooLong(NanoLError, ValueError):
    """Relative-error window exceeds the trajectory duration."""


class ParseError(NanoLError, ValueError):
    def __init__(self, line: int, column: str, reason: str):
        self.line = line
        self.column = column
        self.reason = reason
        super().__init__(f"line {line}, column {column!r}: {reason}")


class NonMonotonicTime(NanoLError, ValueError):
    """Timestamps in a log are not strictly increasing."""


class ConfigError(NanoLError, ValueError):
    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class FilterFailure(NanoLError, RuntimeError):
    """A filter raised during a trial; carries trial and step context."""

    def __init__(self, filter_name: str, step: int, cause: Exception, trial=None):
        self.filter_name = filter_name
        self.step = step
        self.trial = trial
        self.cause = cause
        where = f"trial {trial}, " if trial is not None else ""
        super().__init__(f"{filter_name} failed at {where}step {step}: {cause}")
