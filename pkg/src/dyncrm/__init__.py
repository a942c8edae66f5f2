"""Dynamic Bayesian collective risk model with dependent frequency and severity."""

from .errors import (
    BoundaryWarning,
    ConvergenceError,
    CrmError,
    DataError,
    DomainError,
    ExistenceError,
    InvariantError,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryWarning",
    "ConvergenceError",
    "CrmError",
    "DataError",
    "DomainError",
    "ExistenceError",
    "InvariantError",
]
