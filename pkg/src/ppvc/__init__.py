"""Resilient vector consensus with decaying-noise privacy.

Simulator and analysis toolkit for a multi-agent consensus protocol in two
and three dimensions: agents broadcast noise-masked states, apply a
depth-verified centerpoint to the messages they receive, and contract toward
agreement while Byzantine agents send arbitrary values. The package bundles
the exact geometry (Tukey depth, centerpoint, convex hulls, Hausdorff
distance), the simulation engine, accuracy and coverage analysis, and
privacy accounting for the noise schedule.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DomainError,
    InfeasiblePolicy,
    InsufficientPoints,
    PpvcError,
    RecordError,
    SearchExhausted,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "InfeasiblePolicy",
    "InsufficientPoints",
    "PpvcError",
    "RecordError",
    "SearchExhausted",
    "__version__",
]
