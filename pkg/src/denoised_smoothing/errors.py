"""
Exception hierarchy for the certification engine.

Argument-validation failures also derive from ValueError so callers that
only know about the built-in type still catch them.
"""
from typing import Optional


class SmoothingError(Exception):
    """Base class for every error raised by denoised_smoothing."""


class DomainError(SmoothingError, ValueError):
    """An argument lies outside the domain of an operation."""


class UnsatisfiableSigmaError(DomainError):
    """Requested noise level exceeds what the schedule can represent."""

    def __init__(self, sigma: float, max_sigma: float):
        self.sigma = sigma
        self.max_sigma = max_sigma
        super().__init__(
            f"Invalid sigma: {sigma:.6g}. The schedule can represent at most "
            f"sigma = {max_sigma:.6g}"
        )

    def __reduce__(self):
        return type(self), (self.sigma, self.max_sigma)


class DimensionMismatchError(SmoothingError, ValueError):
    """Vector dimension differs from the model dimension."""

    def __init__(self, expected: int, got: int, what: Optional[str] = None):
        self.expected = expected
        self.got = got
        self.what = what
        label = what or "input"
        super().__init__(f"Invalid {label} dimension: {got}. Must be {expected}")

    def __reduce__(self):
        return type(self), (self.expected, self.got, self.what)


class ConfigError(SmoothingError, ValueError):
    """Run configuration is missing, unreadable or invalid."""


class EmptyDatasetError(ConfigError):
    """A run was asked to process zero points."""


class UnsupportedDenoiserError(SmoothingError):
    """The requested operation cannot be carried out for this denoiser."""


class VerificationError(SmoothingError):
    """A soundness or consistency check failed."""
