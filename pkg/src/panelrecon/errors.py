"""Exception hierarchy.

Every error raised on purpose by the library derives from :class:`ReconError`.
``ValidationError`` subclasses map to CLI exit code 2; plain I/O problems are
left as ``OSError`` and map to exit code 1.
"""

from __future__ import annotations


class ReconError(Exception):
    """Base class for all library errors."""


class ValidationError(ReconError, ValueError):
    """Input or result failed a documented contract."""


class SchemaError(ValidationError):
    pass


class DuplicateKeyError(ValidationError):
    pass


class FrequencyError(ValidationError):
    pass


class DomainError(ValidationError):
    pass


class IdentityViolationError(ValidationError):
    def __init__(self, message: str, region: str | None = None, month: str | None = None):
        super().__init__(message)
        self.region = region
        self.month = month


class IncompleteAccountsError(ValidationError):
    pass


class MisuseError(ValidationError):
    pass


class ExtrapolationError(ValidationError):
    pass


class WindowError(ValidationError):
    pass


class DegenerateError(ValidationError):
    pass


class InsufficientDataError(ValidationError):
    pass


class RankError(ValidationError):
    pass


class NumericalError(ValidationError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CertificationError(ValidationError):
    def __init__(self, message: str, deviation: float | None = None):
        super().__init__(message)
        self.deviation = deviation


class OverlapError(ValidationError):
    pass


class NoDonorError(ValidationError):
    pass


class ReconciliationCapacityError(ValidationError):
    pass


class SignatureError(ValidationError):
    pass


class DivergenceError(ReconError):
    """Training produced a non-finite loss; ``checkpoint`` holds the last good parameters."""

    def __init__(self, message: str, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class FoldError(ValidationError):
    pass


class CoverageError(ValidationError):
    pass


class MissingSeriesError(CoverageError, KeyError):
    """A (region, variable) pair is absent from a panel."""

    __str__ = Exception.__str__


class PeriodError(ValidationError):
    pass


class LeakageError(ValidationError):
    pass


class ClusterCoverageError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class StageError(ReconError):
    """A pipeline stage failed; carries the partial manifest."""

    def __init__(self, stage: str, cause: BaseException, inputs_digest: str, manifest=None):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.inputs_digest = inputs_digest
        self.manifest = manifest


class ShapeError(ValidationError):
    pass
