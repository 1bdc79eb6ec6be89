"""Share-scaled estimation: targets, the residual MLP, baselines and validation."""

from .losses import LossKind, beta_nll, huber_loss, loss_and_grad
from .mlp import (
    AdamState,
    MlpConfig,
    MlpModel,
    TrainingLog,
    adam_step,
    backward,
    batch_loss_and_grad,
    forward,
    mlp_forward,
    predict_rates,
    temporal_split,
    train,
)
from .models import MlpEstimator, RidgeEstimator
from .scaling import Scaler, ScalerKind
from .shares import (
    FeatureMatrix,
    TargetBlock,
    calibrate_to_national,
    from_shares,
    inv_logit,
    logit,
    to_shares,
)
from .validation import (
    Fold,
    MetricReport,
    Metrics,
    SchemeKind,
    ValidationScheme,
    make_folds,
    metrics,
    run_validation,
)

__all__ = [
    "AdamState", "FeatureMatrix", "Fold", "LossKind", "MetricReport", "Metrics", "MlpConfig",
    "MlpEstimator", "MlpModel", "RidgeEstimator", "Scaler", "ScalerKind", "SchemeKind", "TargetBlock",
    "TrainingLog", "ValidationScheme", "adam_step", "backward", "batch_loss_and_grad", "beta_nll",
    "calibrate_to_national", "forward", "from_shares", "huber_loss", "inv_logit", "logit", "loss_and_grad",
    "make_folds", "metrics", "mlp_forward", "predict_rates", "run_validation", "temporal_split", "to_shares",
    "train",
]
