"""Desk-scale simulation lab for classical verification of quantum depth."""

from .errors import (
    CapacityError,
    ConfigError,
    DepthBudgetExceeded,
    ProtocolOrderError,
    QDepthError,
    SchemeViolation,
)

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "ConfigError",
    "DepthBudgetExceeded",
    "ProtocolOrderError",
    "QDepthError",
    "SchemeViolation",
    "__version__",
]
