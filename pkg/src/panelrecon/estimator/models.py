"""Pluggable share estimators: the residual MLP and a ridge baseline in logit space.

``fit`` receives the target name so an MLP ``offset_feature`` written as a
template such as ``"signal_{target}_share"`` resolves per target; targets
whose resolved column is absent train without an offset.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import dataclasses
import logging

import numpy as np

from ..errors import SignatureError
from .mlp import MlpConfig, MlpModel, predict_rates, train
from .scaling import Scaler
from .shares import FeatureMatrix, inv_logit, logit

log = logging.getLogger(__name__)


class FittedEstimator(Protocol):
    def predict(self, X: FeatureMatrix) -> np.ndarray: ...


class Estimator(Protocol):
    """Maps a feature matrix and one share target to a fitted predictor of shares."""

    def fit(self, X: FeatureMatrix, shares: np.ndarray, target: str | None = None) -> FittedEstimator: ...


@dataclass
class FittedMlp:
    model: MlpModel

    def predict(self, X: FeatureMatrix) -> np.ndarray:
        return predict_rates(self.model, X)


@dataclass(frozen=True)
class MlpEstimator:
    config: MlpConfig = MlpConfig()

    def resolved(self, X: FeatureMatrix, target: str | None) -> MlpConfig:
        """The config with a templated offset column resolved for ``target``."""
        template = self.config.offset_feature
        if template is None or "{target}" not in template:
            return self.config
        column = template.format(target=target) if target is not None else None
        if column not in X.columns:
            log.debug("no offset column %r for target %r; training without offset", column, target)
            column = None
        return dataclasses.replace(self.config, offset_feature=column)

    def fit(self, X: FeatureMatrix, shares: np.ndarray, target: str | None = None) -> FittedMlp:
        model, _ = train(X, shares, self.resolved(X, target))
        return FittedMlp(model)


@dataclass
class FittedRidge:
    columns: tuple[str, ...]
    scaler: Scaler
    coef: np.ndarray
    intercept: float

    def predict(self, X: FeatureMatrix) -> np.ndarray:
        if X.columns != self.columns:
            raise SignatureError("feature columns do not match the fitted signature")
        return inv_logit(self.scaler.transform(X.values) @ self.coef + self.intercept)


@dataclass(frozen=True)
class RidgeEstimator:
    """Closed-form ridge regression of ``logit(share)`` on standardized features."""

    alpha: float = 1.0

    def fit(self, X: FeatureMatrix, shares: np.ndarray, target: str | None = None) -> FittedRidge:
        scaler = Scaler.fit(X.values)
        Z = scaler.transform(X.values)
        z = logit(shares)
        zc = z - z.mean()
        p = Z.shape[1]
        Zc = Z - Z.mean(axis=0)
        coef = np.linalg.solve(Zc.T @ Zc + self.alpha * np.eye(p), Zc.T @ zc)
        intercept = float(z.mean() - Z.mean(axis=0) @ coef)
        return FittedRidge(X.columns, scaler, coef, intercept)
