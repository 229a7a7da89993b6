"""Exact, asymptotic and Monte Carlo computations for critical Galton-Watson
processes with stable-index offspring laws."""

from .errors import (
    ConfigInvalid,
    DomainError,
    GWLabError,
    InversionUnstable,
    NotCritical,
    ParameterOutOfRange,
    QuadratureNonConverged,
    RegimeWarning,
    StirlingRangeError,
    TruncationOverflow,
)
from .offspring_laws import (
    OffspringLaw,
    custom_pmf,
    geometric,
    make_law,
    pgf_derivative,
    pgf_eval,
    pmf,
    sample_offspring,
    stable_frac,
    tail,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigInvalid",
    "DomainError",
    "GWLabError",
    "InversionUnstable",
    "NotCritical",
    "OffspringLaw",
    "ParameterOutOfRange",
    "QuadratureNonConverged",
    "RegimeWarning",
    "StirlingRangeError",
    "TruncationOverflow",
    "custom_pmf",
    "geometric",
    "make_law",
    "pgf_derivative",
    "pgf_eval",
    "pmf",
    "sample_offspring",
    "stable_frac",
    "tail",
]
