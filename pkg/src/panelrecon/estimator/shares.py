"""Feature matrices, share targets, the logit link and national calibration."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..errors import DomainError, SchemaError, ShapeError
from ..panel import MonthKey, RegionId, Series
from ..splice import national_align

SHARE_EPS = 1e-6


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense design matrix with one row per (region, month)."""

    values: np.ndarray  # (n, p)
    columns: tuple[str, ...]
    groups: np.ndarray  # region code per row
    times: tuple[MonthKey, ...]

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ShapeError("feature values must be two-dimensional")
        n, p = values.shape
        if len(self.columns) != p:
            raise ShapeError(f"{p} feature columns but {len(self.columns)} names")
        if len(set(self.columns)) != p:
            raise SchemaError("feature column names must be unique")
        if len(self.groups) != n or len(self.times) != n:
            raise ShapeError("groups and times must have one entry per row")
        if not np.all(np.isfinite(values)):
            raise DomainError("feature matrix has missing or non-finite cells")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "groups", np.asarray(self.groups))
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "times", tuple(self.times))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def years(self) -> np.ndarray:
        return np.array([t.year for t in self.times])

    def take(self, rows) -> FeatureMatrix:
        rows = np.asarray(rows)
        return FeatureMatrix(self.values[rows], self.columns, self.groups[rows], tuple(self.times[i] for i in rows))

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]


@dataclass(frozen=True)
class TargetBlock:
    """Targets as population shares, one column per target, plus the divisor."""

    shares: np.ndarray  # (n, J)
    names: tuple[str, ...]
    divisor: np.ndarray  # (n,)
    clamped: np.ndarray = field(default=None)  # (n, J) bool

    def __post_init__(self) -> None:
        shares = np.asarray(self.shares, dtype=float)
        if shares.ndim == 1:
            shares = shares[:, None]
        if shares.shape[1] != len(self.names):
            raise ShapeError("one name per target column is required")
        if len(self.divisor) != shares.shape[0]:
            raise ShapeError("divisor length must match the number of rows")
        clamped = np.zeros(shares.shape, dtype=bool) if self.clamped is None else np.asarray(self.clamped, dtype=bool)
        object.__setattr__(self, "shares", shares)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "divisor", np.asarray(self.divisor, dtype=float))
        object.__setattr__(self, "clamped", clamped.reshape(shares.shape))

    @property
    def clamp_count(self) -> int:
        return int(self.clamped.sum())

    def target(self, name: str) -> np.ndarray:
        return self.shares[:, self.names.index(name)]

    def take(self, rows) -> TargetBlock:
        rows = np.asarray(rows)
        return TargetBlock(self.shares[rows], self.names, self.divisor[rows], self.clamped[rows])

    def levels(self) -> np.ndarray:
        return from_shares(self.shares, self.divisor)


def to_shares(levels, divisor, names: Sequence[str] | None = None) -> TargetBlock:
    """``levels / divisor`` clamped to ``[1e-6, 1 - 1e-6]``; clamp events are flagged."""
    y = np.asarray(levels, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    n = np.asarray(divisor, dtype=float)
    if n.shape != (y.shape[0],):
        raise ShapeError("divisor must have one entry per row")
    if np.any(n <= 0):
        raise DomainError("divisor must be positive")
    raw = y / n[:, None]
    shares = np.clip(raw, SHARE_EPS, 1 - SHARE_EPS)
    names = tuple(names) if names is not None else tuple(f"y{j}" for j in range(y.shape[1]))
    return TargetBlock(shares, names, n, shares != raw)


def from_shares(shares, divisor) -> np.ndarray:
    s = np.asarray(shares, dtype=float)
    n = np.asarray(divisor, dtype=float)
    if np.any((s < 0) | (s > 1)):
        raise DomainError("shares must lie in [0, 1]")
    return s * (n[:, None] if s.ndim == 2 else n)


def logit(y):
    y = np.clip(np.asarray(y, dtype=float), SHARE_EPS, 1 - SHARE_EPS)
    return np.log(y) - np.log1p(-y)


def inv_logit(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    # keep strictly inside (0, 1) even where the sigmoid saturates
    return np.clip(out, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def calibrate_to_national(levels: Mapping[RegionId, Series], national: Series) -> dict[RegionId, Series]:
    """Proportionally rescale regional levels so they add up to ``national`` each month."""
    return national_align(levels, national)
