"""Exception types shared across the toolkit."""


class LockmarkError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(LockmarkError):
    """A value violates its documented range or shape."""


class GeometryError(LockmarkError):
    """A placement or box does not fit inside its host image."""


class DecodeError(LockmarkError):
    """An image file could not be decoded (malformed, truncated, bad depth)."""


class SingularInverseError(LockmarkError):
    """Inverse blending requested where effective alpha is 255."""


class ConfigurationError(LockmarkError):
    """Inconsistent run configuration (missing masks, bad mode, ...)."""


class InfeasibleConstraintError(LockmarkError):
    """The placement-constraint region contains no admissible position."""


class OracleIOError(LockmarkError):
    """An external oracle failed to answer (timeout, protocol violation)."""

    def __init__(self, message: str, request_id: int | None = None):
        super().__init__(message)
        self.request_id = request_id


class AuthorizationError(LockmarkError):
    """A key does not match the supplied logo or locked files."""


class UndefinedMetricError(LockmarkError):
    """A metric has an empty denominator."""
