"""Column-wise affine feature scalers fitted on training rows."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..errors import ShapeError


class ScalerKind(str, Enum):
    STANDARDIZE = "standardize"
    MINMAX = "minmax"
    ROBUST = "robust"


@dataclass(frozen=True)
class Scaler:
    """``transform(x) = (x - center) / scale``; zero spreads are replaced by 1."""

    kind: ScalerKind
    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, kind: ScalerKind | str = ScalerKind.STANDARDIZE) -> Scaler:
        kind = ScalerKind(kind)
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ShapeError("scaler needs a nonempty two-dimensional input")
        if kind is ScalerKind.STANDARDIZE:
            center, scale = X.mean(axis=0), X.std(axis=0)
        elif kind is ScalerKind.MINMAX:
            center, scale = X.min(axis=0), X.max(axis=0) - X.min(axis=0)
        else:
            q1, med, q3 = np.quantile(X, [0.25, 0.5, 0.75], axis=0)
            center, scale = med, q3 - q1
        scale = np.where(scale > 0, scale, 1.0)
        return cls(kind, center, scale)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != len(self.center):
            raise ShapeError(f"expected {len(self.center)} columns, got {X.shape[-1]}")
        return (X - self.center) / self.scale

    def inverse(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.scale + self.center

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "center": self.center.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Scaler:
        return cls(ScalerKind(d["kind"]), np.asarray(d["center"], dtype=float), np.asarray(d["scale"], dtype=float))
