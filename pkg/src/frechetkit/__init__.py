"""Computational toolkit for bounded Fréchet geometry on truncated graded sequence spaces."""

from frechetkit.errors import (
    ConfigError,
    DomainError,
    DslSyntaxError,
    EvalError,
    FrechetKitError,
    InconsistentBoundsError,
    UnsupportedConfigurationError,
)
from frechetkit.frechet_core import FrechetSpace, GradedVector, default_space

__all__ = [
    "ConfigError",
    "DomainError",
    "DslSyntaxError",
    "EvalError",
    "FrechetKitError",
    "FrechetSpace",
    "GradedVector",
    "InconsistentBoundsError",
    "UnsupportedConfigurationError",
    "default_space",
]

__version__ = "0.1.0"
