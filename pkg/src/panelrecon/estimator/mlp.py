"""Residual MLP on logit targets, trained with Adam and early stopping.

Architecture: a linear input projection, ``blocks`` residual blocks computing
``h <- h + ReLU(Dropout(Linear(LayerNorm(h))))`` and a scalar linear head.
Features listed in ``monotone_features`` bypass the trunk and feed a separate
additive branch ``ReLU(x_m @ M1 + c1) @ m2`` whose weights are projected to be
nonnegative, so the output is nondecreasing in those features.

When ``offset_feature`` names a column holding a baseline share, its logit is
added to the network output, so the network learns a correction to that
baseline and falls back to it away from the training support.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from ..errors import DivergenceError, InsufficientDataError, SignatureError
from .losses import LossKind, loss_and_grad
from .scaling import Scaler, ScalerKind
from .shares import FeatureMatrix, inv_logit, logit

log = logging.getLogger(__name__)

LN_EPS = 1e-5


@dataclass(frozen=True)
class MlpConfig:
    hidden_dim: int = 64
    blocks: int = 2
    dropout: float = 0.2
    residual: bool = True
    monotone_features: tuple[str, ...] = ()
    offset_feature: str | None = None
    loss: LossKind = LossKind.HUBER_LOGIT
    delta: float = 1.0
    phi: float = 50.0
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_cap: int = 512
    patience: int = 20
    min_delta: float = 1e-4
    max_epochs: int = 500
    val_fraction: float = 0.2
    scaler: ScalerKind = ScalerKind.STANDARDIZE
    seed: int = 0

    def __post_init__(self) -> None:
        if self.hidden_dim < 1 or self.blocks < 0:
            raise ValueError("hidden_dim must be >= 1 and blocks >= 0")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.patience < 0 or self.max_epochs < 1 or self.batch_cap < 1:
            raise ValueError("patience, max_epochs and batch_cap must be positive")
        object.__setattr__(self, "monotone_features", tuple(self.monotone_features))
        object.__setattr__(self, "loss", LossKind(self.loss))
        object.__setattr__(self, "scaler", ScalerKind(self.scaler))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"] = self.loss.value
        d["scaler"] = self.scaler.value
        d["monotone_features"] = list(self.monotone_features)
        return d


# --------------------------------------------------------------------------- parameters


def init_params(n_trunk: int, n_mono: int, config: MlpConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    H = config.hidden_dim
    p: dict[str, np.ndarray] = {
        "W_in": rng.normal(0.0, np.sqrt(1.0 / max(n_trunk, 1)), (n_trunk, H)),
        "b_in": np.zeros(H),
    }
    for k in range(config.blocks):
        p[f"g{k}"] = np.ones(H)
        p[f"beta{k}"] = np.zeros(H)
        p[f"W{k}"] = rng.normal(0.0, np.sqrt(2.0 / H), (H, H))
        p[f"b{k}"] = np.zeros(H)
    p["w_out"] = np.zeros(H)  # zero head: the untrained net is a constant, not a random function of the inputs
    p["b_out"] = np.zeros(1)
    if n_mono:
        p["M1"] = np.abs(rng.normal(0.0, np.sqrt(2.0 / n_mono), (n_mono, H)))
        p["c1"] = np.zeros(H)
        p["m2"] = np.zeros(H)
    return p


def project_monotone(params: dict[str, np.ndarray]) -> None:
    """Clamp the monotone branch weights at zero from below, in place."""
    for name in ("M1", "m2"):
        if name in params:
            np.maximum(params[name], 0.0, out=params[name])


# --------------------------------------------------------------------------- forward / backward


def forward(
    params: dict[str, np.ndarray],
    Xt: np.ndarray,
    Xm: np.ndarray | None,
    config: MlpConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
):
    """Logits for scaled trunk inputs ``Xt`` and monotone inputs ``Xm``; also returns the cache."""
    if train and config.dropout > 0 and rng is None:
        raise ValueError("train mode with dropout needs an rng")
    h = Xt @ params["W_in"] + params["b_in"]
    blocks = []
    for k in range(config.blocks):
        mu = h.mean(axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(h.var(axis=1, keepdims=True) + LN_EPS)
        xhat = (h - mu) * inv
        u = params[f"g{k}"] * xhat + params[f"beta{k}"]
        a = u @ params[f"W{k}"] + params[f"b{k}"]
        mask = None
        if train and config.dropout > 0:
            mask = (rng.random(a.shape) >= config.dropout) / (1.0 - config.dropout)
            a = a * mask
        v = np.maximum(a, 0.0)
        blocks.append((xhat, inv, u, a, mask))
        h = h + v if config.residual else v
    z = h @ params["w_out"] + params["b_out"][0]
    mono = None
    if "M1" in params:
        s = Xm @ params["M1"] + params["c1"]
        r = np.maximum(s, 0.0)
        z = z + r @ params["m2"]
        mono = (s, r)
    return z, (Xt, Xm, blocks, h, mono)


def backward(params: dict[str, np.ndarray], cache, dz: np.ndarray, config: MlpConfig) -> dict[str, np.ndarray]:
    """Gradients of ``sum(dz * z)`` with respect to every parameter."""
    Xt, Xm, blocks, h, mono = cache
    g: dict[str, np.ndarray] = {}
    g["b_out"] = np.array([dz.sum()])
    g["w_out"] = h.T @ dz
    if mono is not None:
        s, r = mono
        g["m2"] = r.T @ dz
        ds = np.outer(dz, params["m2"]) * (s > 0)
        g["M1"] = Xm.T @ ds
        g["c1"] = ds.sum(axis=0)
    dh = np.outer(dz, params["w_out"])
    H = config.hidden_dim
    for k in reversed(range(config.blocks)):
        xhat, inv, u, a, mask = blocks[k]
        da = dh * (a > 0)
        if mask is not None:
            da = da * mask
        g[f"W{k}"] = u.T @ da
        g[f"b{k}"] = da.sum(axis=0)
        du = da @ params[f"W{k}"].T
        g[f"g{k}"] = (du * xhat).sum(axis=0)
        g[f"beta{k}"] = du.sum(axis=0)
        dx = du * params[f"g{k}"]
        dln = inv / H * (H * dx - dx.sum(axis=1, keepdims=True) - xhat * (dx * xhat).sum(axis=1, keepdims=True))
        dh = dh + dln if config.residual else dln
    g["W_in"] = Xt.T @ dh
    g["b_in"] = dh.sum(axis=0)
    return g


def batch_loss_and_grad(params, Xt, Xm, y, config: MlpConfig, train: bool = False, rng=None, offset=None):
    """Mean loss over the batch and its parameter gradients; ``offset`` is added to the logits."""
    z, cache = forward(params, Xt, Xm, config, train, rng)
    if offset is not None:
        z = z + offset
    per_row, dz = loss_and_grad(z, y, config.loss, config.delta, config.phi)
    n = len(y)
    return float(per_row.mean()), backward(params, cache, dz / n, config)


def weight_decay_gradient(params: dict[str, np.ndarray], weight_decay: float) -> dict[str, np.ndarray]:
    """Gradient of ``weight_decay / 2 * ||p||^2``, the term Adam decays with."""
    return {k: weight_decay * v for k, v in params.items()}


# --------------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> AdamState:
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(
    params: dict[str, np.ndarray],
    state: AdamState,
    grads: dict[str, np.ndarray],
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> AdamState:
    """One bias-corrected Adam update in place, with weight decay applied directly to the parameters."""
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for k, p in params.items():
        gk = grads[k]
        if gk.shape != p.shape:
            raise ValueError(f"gradient shape {gk.shape} does not match parameter {k} {p.shape}")
        m = state.m[k]
        v = state.v[k]
        m *= beta1
        m += (1.0 - beta1) * gk
        v *= beta2
        v += (1.0 - beta2) * gk * gk
        p -= lr * ((m / c1) / (np.sqrt(v / c2) + eps) + weight_decay * p)
    return state


# --------------------------------------------------------------------------- model


@dataclass
class MlpModel:
    config: MlpConfig
    columns: tuple[str, ...]
    scaler: Scaler
    params: dict[str, np.ndarray]
    epochs_run: int = 0
    best_val_loss: float = float("inf")

    @property
    def trunk_columns(self) -> list[int]:
        return [i for i, c in enumerate(self.columns) if c not in self.config.monotone_features]

    @property
    def monotone_columns(self) -> list[int]:
        return [i for i, c in enumerate(self.columns) if c in self.config.monotone_features]

    def split_inputs(self, X: FeatureMatrix | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if isinstance(X, FeatureMatrix):
            if X.columns != self.columns:
                raise SignatureError(f"feature columns {X.columns} do not match the model signature {self.columns}")
            values = X.values
        else:
            values = np.asarray(X, dtype=float)
            if values.ndim != 2 or values.shape[1] != len(self.columns):
                raise SignatureError(f"expected {len(self.columns)} feature columns")
        Z = self.scaler.transform(values)
        return Z[:, self.trunk_columns], Z[:, self.monotone_columns]

    def offsets(self, X: FeatureMatrix | np.ndarray) -> np.ndarray:
        """Logit of the raw baseline column, or zeros without an offset."""
        values = X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=float)
        if self.config.offset_feature is None:
            return np.zeros(len(values))
        if self.config.offset_feature not in self.columns:
            raise SignatureError(f"offset feature {self.config.offset_feature!r} is not a model column")
        return logit(values[:, self.columns.index(self.config.offset_feature)])

    def to_json(self) -> str:
        return json.dumps({
            "format": "panelrecon-mlp/1",
            "config": self.config.to_dict(),
            "seed": self.config.seed,
            "columns": list(self.columns),
            "scaler": self.scaler.to_dict(),
            "params": {k: {"shape": list(v.shape), "data": v.ravel(order="C").tolist()} for k, v in self.params.items()},
            "epochs_run": self.epochs_run,
            "best_val_loss": self.best_val_loss,
        })

    @classmethod
    def from_json(cls, text: str) -> MlpModel:
        d = json.loads(text)
        cfg = d["config"]
        cfg["monotone_features"] = tuple(cfg["monotone_features"])
        params = {k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in d["params"].items()}
        return cls(
            MlpConfig(**cfg), tuple(d["columns"]), Scaler.from_dict(d["scaler"]), params,
            d["epochs_run"], d["best_val_loss"],
        )


def mlp_forward(model: MlpModel, X: FeatureMatrix | np.ndarray, mode: str = "eval", rng=None) -> np.ndarray:
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    Xt, Xm = model.split_inputs(X)
    z, _ = forward(model.params, Xt, Xm, model.config, mode == "train", rng)
    return z + model.offsets(X)


def predict_rates(model: MlpModel, X: FeatureMatrix | np.ndarray) -> np.ndarray:
    return inv_logit(mlp_forward(model, X, "eval"))


# --------------------------------------------------------------------------- training


@dataclass
class TrainingLog:
    epochs: list[dict] = field(default_factory=list)
    stopped_early: bool = False
    best_epoch: int = 0
    train_rows: int = 0
    val_rows: int = 0


def temporal_split(times: Iterable, fraction: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """Row indices of the earlier periods and of the latest ``fraction`` of distinct periods."""
    times = list(times)
    distinct = sorted(set(times))
    if len(distinct) < 2:
        raise InsufficientDataError("the temporal validation split needs at least two distinct periods")
    n_val = min(len(distinct) - 1, max(1, int(round(fraction * len(distinct)))))
    cutoff = distinct[len(distinct) - n_val]
    is_val = np.array([t >= cutoff for t in times])
    return np.flatnonzero(~is_val), np.flatnonzero(is_val)


def _copy(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in params.items()}


def train(X: FeatureMatrix, shares, config: MlpConfig = MlpConfig()) -> tuple[MlpModel, TrainingLog]:
    """Fit one model to a single share target.

    The latest periods form the validation set; training stops after
    ``patience`` epochs without an improvement of at least ``min_delta`` and the
    best-validation parameters are restored.
    """
    y = np.asarray(shares, dtype=float).ravel()
    if len(y) != X.n_rows:
        raise ValueError("one target value per feature row is required")
    missing = (set(config.monotone_features) | ({config.offset_feature} - {None})) - set(X.columns)
    if missing:
        raise SignatureError(f"monotone or offset features not in the matrix: {sorted(missing)}")
    tr, va = temporal_split(X.times, config.val_fraction)
    rng = np.random.default_rng(config.seed)
    scaler = Scaler.fit(X.values[tr], config.scaler)
    model = MlpModel(config, X.columns, scaler, {})
    Xt, Xm = model.split_inputs(X)
    off = model.offsets(X)
    model.params = init_params(Xt.shape[1], Xm.shape[1], config, rng)
    # start the head at the mean training logit so early stopping does not fire while the bias is still drifting
    model.params["b_out"][:] = float(np.mean(logit(y[tr]) - off[tr]))
    state = AdamState.zeros_like(model.params)
    batch = min(config.batch_cap, len(tr))
    tlog = TrainingLog(train_rows=len(tr), val_rows=len(va))
    best, best_params, wait = np.inf, _copy(model.params), 0
    for epoch in range(1, config.max_epochs + 1):
        order = tr[rng.permutation(len(tr))]
        total = 0.0
        for start in range(0, len(order), batch):
            rows = order[start : start + batch]
            loss, grads = batch_loss_and_grad(model.params, Xt[rows], Xm[rows], y[rows], config, True, rng, off[rows])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}", checkpoint=best_params)
            adam_step(model.params, state, grads, config.lr, weight_decay=config.weight_decay)
            project_monotone(model.params)
            total += loss * len(rows)
        z, _ = forward(model.params, Xt[va], Xm[va], config)
        z = z + off[va]
        val = float(loss_and_grad(z, y[va], config.loss, config.delta, config.phi)[0].mean())
        if not np.isfinite(val):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}", checkpoint=best_params)
        tlog.epochs.append({"epoch": epoch, "train_loss": total / len(tr), "val_loss": val})
        if val < best - config.min_delta:
            best, best_params, wait = val, _copy(model.params), 0
            tlog.best_epoch = epoch
        else:
            wait += 1
        if wait >= config.patience:
            tlog.stopped_early = epoch < config.max_epochs
            break
    model.params = best_params
    model.epochs_run = len(tlog.epochs)
    model.best_val_loss = best
    log.debug("trained %d epochs, best validation loss %.6g at epoch %d", model.epochs_run, best, tlog.best_epoch)
    return model, tlog
