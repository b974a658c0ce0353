"""Exception types raised across the package."""


class PpvcError(Exception):
    """Base class for package errors."""


class InsufficientPoints(PpvcError):
    """A geometric operation received fewer points than its minimum."""


class SearchExhausted(PpvcError):
    """Centerpoint search spent its budget without verifying the target depth."""

    def __init__(self, message, best_depth=None, target=None):
        super().__init__(message)
        self.best_depth = best_depth
        self.target = target


class InfeasiblePolicy(PpvcError):
    """Schedule generation could not satisfy its constraints."""


class DomainError(PpvcError):
    """Arguments outside a function's admissible domain."""


class ConfigError(PpvcError):
    """Experiment configuration failed validation."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class RecordError(PpvcError):
    """A record file is malformed or of an unexpected kind."""
