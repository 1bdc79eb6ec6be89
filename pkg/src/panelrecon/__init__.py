"""Reconstruction of coherent monthly regional labor panels from fragmentary sources."""

__version__ = "0.1.0"

from .errors import ReconError, ValidationError
from .panel import (
    NATIONAL,
    ConversionRule,
    Frequency,
    LaborAccounts,
    MonthKey,
    Panel,
    RegionId,
    RegionKind,
    Series,
    close_identities,
    ingest_csv,
)

__all__ = [
    "NATIONAL", "ConversionRule", "Frequency", "LaborAccounts", "MonthKey", "Panel", "ReconError",
    "RegionId", "RegionKind", "Series", "ValidationError", "close_identities", "ingest_csv", "__version__",
]
