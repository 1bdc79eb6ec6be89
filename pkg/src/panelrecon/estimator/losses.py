"""Per-observation losses on a logit output ``z`` and their derivatives in ``z``."""

from __future__ import annotations

from enum import Enum

import numpy as np
from scipy.special import digamma, gammaln

from .shares import SHARE_EPS, inv_logit, logit


class LossKind(str, Enum):
    HUBER_LOGIT = "huber_logit"
    MSE_LOGIT = "mse_logit"
    BETA_NLL = "beta_nll"


def huber_loss(residual, delta: float = 1.0):
    if delta <= 0:
        raise ValueError("delta must be positive")
    r = np.abs(np.asarray(residual, dtype=float))
    return np.where(r <= delta, 0.5 * r * r, delta * (r - 0.5 * delta))


def beta_nll(y, mu, phi: float):
    """Negative log-density of ``Beta(mu * phi, (1 - mu) * phi)`` at ``y``."""
    y = np.clip(np.asarray(y, dtype=float), SHARE_EPS, 1 - SHARE_EPS)
    mu = np.clip(np.asarray(mu, dtype=float), SHARE_EPS, 1 - SHARE_EPS)
    a, b = mu * phi, (1 - mu) * phi
    return gammaln(a) + gammaln(b) - gammaln(phi) - (a - 1) * np.log(y) - (b - 1) * np.log1p(-y)


def loss_and_grad(z: np.ndarray, y: np.ndarray, kind: LossKind | str, delta: float = 1.0, phi: float = 50.0):
    """Per-row loss and ``d loss / d z`` for targets ``y`` given as shares."""
    kind = LossKind(kind)
    if kind is LossKind.HUBER_LOGIT:
        r = z - logit(y)
        return huber_loss(r, delta), np.clip(r, -delta, delta)
    if kind is LossKind.MSE_LOGIT:
        r = z - logit(y)
        return r * r, 2.0 * r
    mu = inv_logit(z)
    yc = np.clip(y, SHARE_EPS, 1 - SHARE_EPS)
    a, b = mu * phi, (1 - mu) * phi
    dmu = phi * (digamma(a) - digamma(b) - np.log(yc) + np.log1p(-yc))
    return beta_nll(yc, mu, phi), dmu * mu * (1 - mu)
