"""Error metrics and cross-validation schemes for share estimators."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator

import numpy as np

from ..errors import FoldError, ShapeError
from .mlp import MlpConfig
from .models import Estimator, MlpEstimator
from .shares import FeatureMatrix, TargetBlock

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Metrics:
    rmse: float
    mae: float
    mape: float


def metrics(y, yhat, epsilon: float = 1e-8) -> Metrics:
    """RMSE, MAE and MAPE (percent, denominator ``max(|y|, epsilon)``)."""
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.shape != yhat.shape:
        raise ShapeError(f"length mismatch: {len(y)} vs {len(yhat)}")
    if len(y) == 0:
        raise ShapeError("metrics need at least one observation")
    e = y - yhat
    return Metrics(
        rmse=float(np.sqrt(np.mean(e * e))),
        mae=float(np.mean(np.abs(e))),
        mape=float(np.mean(100.0 * np.abs(e) / np.maximum(np.abs(y), epsilon))),
    )


class SchemeKind(str, Enum):
    FULL_FIT = "full_fit"
    HOLDOUT_STRATIFIED = "holdout_stratified"
    LKO = "lko"
    LOGO = "logo"
    LOYO = "loyo"


@dataclass(frozen=True)
class ValidationScheme:
    kind: SchemeKind
    frac: float = 0.2
    k: int = 3
    n_iter: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", SchemeKind(self.kind))

    @classmethod
    def full_fit(cls) -> ValidationScheme:
        return cls(SchemeKind.FULL_FIT)

    @classmethod
    def holdout_stratified(cls, frac: float = 0.2, seed: int = 0) -> ValidationScheme:
        return cls(SchemeKind.HOLDOUT_STRATIFIED, frac=frac, seed=seed)

    @classmethod
    def lko(cls, k: int = 3, n_iter: int = 20, seed: int = 0) -> ValidationScheme:
        return cls(SchemeKind.LKO, k=k, n_iter=n_iter, seed=seed)

    @classmethod
    def logo(cls) -> ValidationScheme:
        return cls(SchemeKind.LOGO)

    @classmethod
    def loyo(cls) -> ValidationScheme:
        return cls(SchemeKind.LOYO)

    @classmethod
    def from_name(cls, name: str, seed: int = 0) -> ValidationScheme:
        """Scheme with default parameters by its ``SchemeKind`` value."""
        kind = SchemeKind(name)
        if kind is SchemeKind.LKO:
            return cls.lko(seed=seed)
        if kind is SchemeKind.HOLDOUT_STRATIFIED:
            return cls.holdout_stratified(seed=seed)
        return cls(kind, seed=seed)


@dataclass(frozen=True)
class Fold:
    fold_id: str
    train: np.ndarray
    test: np.ndarray


def make_folds(scheme: ValidationScheme, groups, years) -> list[Fold]:
    """Row partitions for ``scheme``; deterministic given the scheme's seed."""
    groups = np.asarray(groups)
    years = np.asarray(years)
    n = len(groups)
    rows = np.arange(n)
    folds: list[Fold] = []
    kind = scheme.kind
    if kind is SchemeKind.FULL_FIT:
        folds.append(Fold("all", rows, rows))
    elif kind is SchemeKind.HOLDOUT_STRATIFIED:
        rng = np.random.default_rng(scheme.seed)
        test: list[int] = []
        for year in np.unique(years):
            idx = rows[years == year]
            n_test = int(np.floor(scheme.frac * len(idx) + 0.5))
            test.extend(rng.permutation(idx)[:n_test])
        mask = np.zeros(n, dtype=bool)
        mask[test] = True
        folds.append(Fold("holdout", rows[~mask], rows[mask]))
    elif kind is SchemeKind.LKO:
        uniq = np.unique(groups)
        if not 0 < scheme.k < len(uniq):
            raise FoldError(f"lko needs 0 < k < {len(uniq)} groups, got k={scheme.k}")
        rng = np.random.default_rng(scheme.seed)
        for i in range(scheme.n_iter):
            out = np.sort(rng.choice(uniq, size=scheme.k, replace=False))
            mask = np.isin(groups, out)
            folds.append(Fold(f"iter{i:02d}:" + "+".join(map(str, out)), rows[~mask], rows[mask]))
    elif kind is SchemeKind.LOGO:
        for g in np.unique(groups):
            mask = groups == g
            folds.append(Fold(str(g), rows[~mask], rows[mask]))
    else:
        for year in np.unique(years):
            mask = years == year
            folds.append(Fold(str(year), rows[~mask], rows[mask]))
    for f in folds:
        if len(f.test) == 0:
            raise FoldError(f"fold {f.fold_id} has no test rows")
        if len(f.train) == 0:
            raise FoldError(f"fold {f.fold_id} has no training rows")
        log.debug("fold %s: %d train rows, %d test rows", f.fold_id, len(f.train), len(f.test))
    return folds


@dataclass
class MetricReport:
    scheme: str
    records: list[dict] = field(default_factory=list)

    def add(self, fold: str, target: str, scale: str, m: Metrics) -> None:
        self.records.append({
            "scheme": self.scheme, "fold": fold, "target": target, "scale": scale,
            "rmse": m.rmse, "mae": m.mae, "mape": m.mape,
        })

    def folds(self) -> list[str]:
        return sorted({r["fold"] for r in self.records})

    def mean(self, target: str, scale: str = "share") -> Metrics:
        rows = [r for r in self.records if r["target"] == target and r["scale"] == scale]
        if not rows:
            raise KeyError(f"no records for {target!r} on the {scale} scale")
        return Metrics(*(float(np.mean([r[m] for r in rows])) for m in ("rmse", "mae", "mape")))

    def __iter__(self) -> Iterator[dict]:
        return iter(self.records)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, ["scheme", "fold", "target", "scale", "rmse", "mae", "mape"], lineterminator="\n")
        w.writeheader()
        for r in sorted(self.records, key=lambda r: (r["fold"], r["target"], r["scale"])):
            w.writerow({**r, **{m: repr(float(r[m])) for m in ("rmse", "mae", "mape")}})
        return buf.getvalue()


def run_validation(
    X: FeatureMatrix,
    targets: TargetBlock,
    estimator: Estimator | MlpConfig,
    scheme: ValidationScheme,
) -> MetricReport:
    """Fit one model per target on each fold's complement and score the fold.

    Scores are reported on the share scale and on the level scale
    (``share * divisor``).
    """
    if isinstance(estimator, MlpConfig):
        estimator = MlpEstimator(estimator)
    if targets.shares.shape[0] != X.n_rows:
        raise ShapeError("targets and features must have the same rows")
    report = MetricReport(scheme.kind.value)
    for fold in make_folds(scheme, X.groups, X.years):
        Xtr, Xte = X.take(fold.train), X.take(fold.test)
        for j, name in enumerate(targets.names):
            fitted = estimator.fit(Xtr, targets.shares[fold.train, j], target=name)
            pred = fitted.predict(Xte)
            truth = targets.shares[fold.test, j]
            div = targets.divisor[fold.test]
            report.add(fold.fold_id, name, "share", metrics(truth, pred))
            report.add(fold.fold_id, name, "level", metrics(truth * div, pred * div))
    return report
