from __future__ import annotations

import dataclasses
import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _oracles import affine_share_data, finite_difference_errors, random_mlp_case
from panelrecon.errors import DegenerateError, DomainError, FoldError, SchemaError, ShapeError, SignatureError
from panelrecon.estimator import (
    AdamState,
    FeatureMatrix,
    MlpConfig,
    MlpEstimator,
    MlpModel,
    RidgeEstimator,
    Scaler,
    ValidationScheme,
    adam_step,
    batch_loss_and_grad,
    beta_nll,
    calibrate_to_national,
    forward,
    from_shares,
    huber_loss,
    inv_logit,
    logit,
    make_folds,
    metrics,
    mlp_forward,
    predict_rates,
    run_validation,
    temporal_split,
    to_shares,
    train,
)
from panelrecon.estimator.mlp import weight_decay_gradient
from panelrecon.estimator.shares import TargetBlock
from panelrecon.panel import MonthKey, Series, department

# --------------------------------------------------------------------------- shares and link


def test_to_shares_examples():
    t = to_shares([60.0, 0.0, 100.0], [100.0, 100.0, 100.0])
    assert t.shares[0, 0] == 0.6
    assert t.shares[1, 0] == 1e-6 and t.shares[2, 0] == 1 - 1e-6
    assert t.clamped[:, 0].tolist() == [False, True, True] and t.clamp_count == 2
    with pytest.raises(DomainError):
        to_shares([1.0], [0.0])


def test_from_shares_examples():
    assert from_shares(np.array([0.6]), np.array([100.0])).tolist() == [60.0]
    assert from_shares(np.array([0.0]), np.array([37.0])).tolist() == [0.0]
    with pytest.raises(DomainError):
        from_shares(np.array([1.5]), np.array([1.0]))


@given(st.lists(st.tuples(st.floats(1e-3, 1 - 1e-3), st.floats(1.0, 1e8)), min_size=1, max_size=30))
def test_share_round_trip(rows):
    s, n = (np.array(c) for c in zip(*rows))
    back = to_shares(from_shares(s, n), n).shares[:, 0]
    assert np.max(np.abs(back - s)) <= 1e-12


def test_logit_examples():
    assert logit(0.5) == 0.0 and inv_logit(np.array([0.0]))[0] == 0.5
    getcontext().prec = 40
    p = Decimal(1) / (Decimal(1) + (-Decimal(1)).exp())  # high-precision sigmoid(1)
    assert str(p).startswith("0.731058")
    assert logit(float(p)) == pytest.approx(1.0, abs=1e-12)
    assert inv_logit(np.array([1.0]))[0] == pytest.approx(float(p), abs=1e-15)
    extreme = inv_logit(np.array([-800.0, 800.0]))
    assert 0 < extreme[0] and extreme[1] < 1


@given(st.floats(1e-5, 1 - 1e-5))
def test_logit_inverse(y):
    assert abs(inv_logit(np.array([logit(y)]))[0] - y) <= 1e-9


# --------------------------------------------------------------------------- losses


def test_huber_examples():
    assert huber_loss(0.5) == 0.125
    assert huber_loss(2.0, 1.0) == 1.5
    for d in (0.5, 1.0, 3.0):
        quad = 0.5 * d * d
        lin = d * (d - 0.5 * d)
        assert huber_loss(d, d) == quad == lin and huber_loss(-d, d) == quad


def beta_nll_oracle(y, mu, phi):
    a, b = mu * phi, (1 - mu) * phi
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(phi) - (a - 1) * math.log(y) - (b - 1) * math.log(1 - y)


def test_beta_nll_examples():
    assert beta_nll(0.5, 0.5, 2.0) == pytest.approx(0.0, abs=1e-12)
    assert beta_nll(0.3, 0.3, 10.0) < beta_nll(0.3, 0.6, 10.0)
    assert beta_nll(0.3, 0.6, 10.0) == pytest.approx(beta_nll_oracle(0.3, 0.6, 10.0), rel=1e-12)


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0.5, 200.0))
def test_beta_nll_symmetry_and_oracle(y, mu, phi):
    assert beta_nll(y, mu, phi) == pytest.approx(beta_nll(1 - y, 1 - mu, phi), rel=1e-9, abs=1e-9)
    assert beta_nll(y, mu, phi) == pytest.approx(beta_nll_oracle(y, mu, phi), rel=1e-9, abs=1e-9)


@given(st.floats(0.05, 0.95), st.floats(2.0, 100.0))
def test_beta_nll_minimized_near_observation(y, phi):
    grid = np.linspace(0.01, 0.99, 981)
    best = grid[np.argmin(beta_nll(y, grid, phi))]
    # the minimizer of the Beta log-density in its mean is close to y and converges to y as phi grows
    assert abs(best - y) <= 2.0 / phi + 0.01


# --------------------------------------------------------------------------- gradients


@pytest.mark.parametrize("loss", ["huber_logit", "mse_logit", "beta_nll"])
@pytest.mark.parametrize("seed", range(6))
def test_gradients_match_finite_differences(loss, seed):
    cfg, params, Xt, Xm, y = random_mlp_case(seed, loss)
    errors = finite_difference_errors(cfg, params, Xt, Xm, y)
    assert max(errors.values()) <= 1e-4, errors


def test_zero_residual_gives_zero_gradient():
    cfg, params, Xt, Xm, _ = random_mlp_case(3, "mse_logit")
    z, _ = forward(params, Xt, Xm, cfg)
    loss, grads = batch_loss_and_grad(params, Xt, Xm, inv_logit(z), cfg)
    assert loss == pytest.approx(0.0, abs=1e-18)
    assert max(float(np.abs(g).max()) for g in grads.values()) <= 1e-9


def test_weight_decay_gradient():
    params = {"a": np.array([1.0, -2.0]), "b": np.array([[3.0]])}
    g = weight_decay_gradient(params, 1e-4)
    for k in params:
        np.testing.assert_array_equal(g[k], 1e-4 * params[k])


# --------------------------------------------------------------------------- Adam


def test_adam_first_step_is_sign():
    p = {"w": np.array([1.0, 1.0, 1.0])}
    g = {"w": np.array([5.0, -0.3, 1e3])}
    adam_step(p, AdamState.zeros_like(p), g, lr=0.01)
    np.testing.assert_allclose(p["w"], 1.0 - 0.01 * np.sign(g["w"]), rtol=1e-6)


def test_adam_zero_gradient_no_decay_is_identity():
    p = {"w": np.array([0.5, -2.0])}
    s = AdamState.zeros_like(p)
    adam_step(p, s, {"w": np.zeros(2)}, lr=0.1)
    assert p["w"].tolist() == [0.5, -2.0] and s.t == 1


def test_adam_matches_recurrence_oracle():
    rng = np.random.default_rng(0)
    w0 = rng.standard_normal(4)
    grads = [rng.standard_normal(4), rng.standard_normal(4)]
    lr, b1, b2, eps, wd = 1e-3, 0.9, 0.999, 1e-8, 1e-4
    p = {"w": w0.copy()}
    s = AdamState.zeros_like(p)
    for g in grads:
        adam_step(p, s, {"w": g}, lr, b1, b2, eps, wd)
    w, m, v = w0.copy(), np.zeros(4), np.zeros(4)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g**2
        mhat, vhat = m / (1 - b1**t), v / (1 - b2**t)
        w = w - lr * (mhat / (np.sqrt(vhat) + eps) + wd * w)
    assert np.max(np.abs(p["w"] - w)) <= 1e-12 and s.t == 2


# --------------------------------------------------------------------------- forward


def identity_model(residual: bool) -> MlpModel:
    cfg = MlpConfig(hidden_dim=2, blocks=1, dropout=0.0, residual=residual)
    params = {
        "W_in": np.eye(2), "b_in": np.zeros(2), "g0": np.ones(2), "beta0": np.zeros(2),
        "W0": np.eye(2), "b0": np.zeros(2), "w_out": np.ones(2), "b_out": np.zeros(1),
    }
    return MlpModel(cfg, ("a", "b"), Scaler("standardize", np.zeros(2), np.ones(2)), params)


def test_residual_forward_hand_computed():
    x = np.array([[1.0, 3.0]])
    # layer norm of (1, 3): mean 2, variance 1 -> (-1, 1) / sqrt(1 + 1e-5); ReLU keeps the second unit
    c = 1.0 / math.sqrt(1.0 + 1e-5)
    assert mlp_forward(identity_model(True), x)[0] == pytest.approx(1.0 + 3.0 + c, abs=1e-12)
    assert mlp_forward(identity_model(False), x)[0] == pytest.approx(c, abs=1e-12)


def test_zero_network_predicts_one_half_and_is_deterministic():
    model = identity_model(True)
    model.params = {k: np.zeros_like(v) for k, v in model.params.items()}
    x = np.random.default_rng(0).standard_normal((5, 2)) * 100
    assert np.all(predict_rates(model, x) == 0.5)
    m2 = identity_model(True)
    np.testing.assert_array_equal(mlp_forward(m2, x), mlp_forward(m2, x))
    out = predict_rates(m2, x)
    assert out.min() > 0 and out.max() < 1


def test_signature_and_train_mode_checks():
    model = identity_model(True)
    fm = FeatureMatrix(np.ones((1, 2)), ("b", "a"), ["05"], (MonthKey(2020, 1),))
    with pytest.raises(SignatureError):
        mlp_forward(model, fm)
    with pytest.raises(SignatureError):
        mlp_forward(model, np.ones((1, 3)))
    drop = dataclasses.replace(model, config=dataclasses.replace(model.config, dropout=0.5))
    with pytest.raises(ValueError):
        mlp_forward(drop, np.ones((1, 2)), "train")


def test_offset_shifts_logits_by_baseline():
    model = identity_model(True)
    model.params = {k: np.zeros_like(v) for k, v in model.params.items()}
    model.config = dataclasses.replace(model.config, offset_feature="b")
    x = np.array([[0.0, 0.2], [5.0, 0.7]])
    np.testing.assert_allclose(predict_rates(model, x), [0.2, 0.7], rtol=1e-12)


# --------------------------------------------------------------------------- training


def test_training_fits_affine_target():
    X, y = affine_share_data()
    cfg = MlpConfig(hidden_dim=16, dropout=0.0, lr=3e-3, min_delta=0.0, patience=30, seed=1)
    model, tlog = train(X, y, cfg)
    assert tlog.epochs and len(tlog.epochs) <= 500
    _, va = temporal_split(X.times)
    mape = metrics(y[va], predict_rates(model, X.take(va))).mape
    assert mape <= 1.0


def test_patience_zero_runs_one_epoch():
    X, y = affine_share_data(groups=3, months=12)
    model, tlog = train(X, y, MlpConfig(hidden_dim=4, patience=0))
    assert len(tlog.epochs) == 1 and model.epochs_run == 1


def test_training_is_seed_deterministic():
    X, y = affine_share_data(groups=3, months=12)
    cfg = MlpConfig(hidden_dim=8, max_epochs=15, seed=7)
    a, la = train(X, y, cfg)
    b, lb = train(X, y, cfg)
    assert la.epochs == lb.epochs
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])
    assert a.to_json() == b.to_json()


def test_temporal_split_holds_out_latest_periods():
    times = [MonthKey(2020, m) for m in range(1, 11)] * 2
    tr, va = temporal_split(times)
    assert sorted({times[i] for i in va}) == [MonthKey(2020, 9), MonthKey(2020, 10)]
    assert max(times[i] for i in tr) < MonthKey(2020, 9)


def test_monotone_feature_probe():
    X, _ = affine_share_data(seed=4, features=3)
    y = 0.2 + 0.3 * X.values[:, 1] + 0.2 * np.sin(3 * X.values[:, 0])
    cfg = MlpConfig(hidden_dim=8, dropout=0.1, max_epochs=60, monotone_features=("x1",), seed=2)
    model, _ = train(X, y, cfg)
    assert np.all(model.params["M1"] >= 0) and np.all(model.params["m2"] >= 0)
    rng = np.random.default_rng(0)
    for _ in range(20):
        base = rng.uniform(0, 1, 3)
        grid = np.tile(base, (101, 1))
        grid[:, 1] = np.linspace(-2, 3, 101)
        assert np.all(np.diff(predict_rates(model, grid)) >= 0)


def test_checkpoint_round_trip():
    X, y = affine_share_data(groups=3, months=12)
    model, _ = train(X, y, MlpConfig(hidden_dim=6, max_epochs=5, monotone_features=("x2",), offset_feature=None))
    back = MlpModel.from_json(model.to_json())
    assert back.config == model.config
    np.testing.assert_array_equal(predict_rates(back, X), predict_rates(model, X))


def test_train_rejects_unknown_monotone_feature():
    X, y = affine_share_data(groups=2, months=12)
    with pytest.raises(SignatureError):
        train(X, y, MlpConfig(monotone_features=("nope",)))


# --------------------------------------------------------------------------- calibration and metrics


def test_calibrate_examples():
    a, b = department("05"), department("08")
    j = MonthKey(2020, 1)
    out = calibrate_to_national({a: Series.monthly(j, [1.0]), b: Series.monthly(j, [1.0])}, Series.monthly(j, [4.0]))
    assert (out[a][j], out[b][j]) == (2.0, 2.0)
    same = calibrate_to_national({a: Series.monthly(j, [1.0]), b: Series.monthly(j, [3.0])}, Series.monthly(j, [4.0]))
    assert (same[a][j], same[b][j]) == (1.0, 3.0)
    with pytest.raises(DegenerateError):
        calibrate_to_national({a: Series.monthly(j, [0.0])}, Series.monthly(j, [4.0]))


def test_metrics_examples():
    m = metrics([100.0], [90.0])
    assert (m.mae, m.rmse, m.mape) == (10.0, 10.0, 10.0)
    assert metrics([1.0, 2.0], [1.0, 2.0]) == type(m)(0.0, 0.0, 0.0)
    assert metrics([0.0], [1.0]).mape == pytest.approx(1e10)
    # three-point hand values: errors (1, -2, 2)
    m3 = metrics([10.0, 20.0, 40.0], [9.0, 22.0, 38.0])
    assert (m3.mae, m3.rmse, m3.mape) == (5 / 3, math.sqrt(3.0), 25 / 3)
    with pytest.raises(ShapeError):
        metrics([1.0, 2.0], [1.0])


# --------------------------------------------------------------------------- folds and validation


def test_logo_three_groups():
    groups = np.array(["a", "b", "c"] * 4)
    folds = make_folds(ValidationScheme.logo(), groups, np.full(12, 2020))
    assert len(folds) == 3
    assert sorted(np.concatenate([f.test for f in folds]).tolist()) == list(range(12))
    for f in folds:
        assert len(set(groups[f.test])) == 1 and set(groups[f.test]).isdisjoint(groups[f.train])


def test_lko_deterministic_and_checked():
    groups = np.repeat(list("abcdefg"), 5)
    years = np.full(len(groups), 2020)
    a = make_folds(ValidationScheme.lko(3, 20, seed=5), groups, years)
    b = make_folds(ValidationScheme.lko(3, 20, seed=5), groups, years)
    assert len(a) == 20
    assert [f.fold_id for f in a] == [f.fold_id for f in b]
    assert all(np.array_equal(x.test, y.test) for x, y in zip(a, b))
    assert all(len(set(groups[f.test])) == 3 for f in a)
    with pytest.raises(FoldError):
        make_folds(ValidationScheme.lko(7, 2), groups, years)


@given(st.lists(st.integers(2000, 2004), min_size=5, max_size=80), st.integers(0, 1000))
def test_holdout_stratified_counts(years, seed):
    years = np.array(years)
    groups = np.array([f"g{i % 3}" for i in range(len(years))])
    try:
        (fold,) = make_folds(ValidationScheme.holdout_stratified(0.2, seed), groups, years)
    except FoldError:
        # every year too small to contribute a test row
        assert all(np.floor(0.2 * np.sum(years == y) + 0.5) == 0 for y in np.unique(years))
        return
    for y in np.unique(years):
        n_year = int(np.sum(years == y))
        n_test = int(np.sum(years[fold.test] == y))
        assert math.floor(0.2 * n_year) <= n_test <= math.ceil(0.2 * n_year)
    assert sorted(np.concatenate([fold.train, fold.test]).tolist()) == list(range(len(years)))


def test_loyo_and_full_fit_partitions():
    years = np.repeat([2018, 2019, 2020], 4)
    groups = np.tile(list("ab"), 6)
    loyo = make_folds(ValidationScheme.loyo(), groups, years)
    assert [f.fold_id for f in loyo] == ["2018", "2019", "2020"]
    (full,) = make_folds(ValidationScheme.full_fit(), groups, years)
    assert np.array_equal(full.train, full.test)


def test_full_fit_memorizes_affine_target_and_level_duality():
    X, y = affine_share_data(groups=4, months=24)
    targets = TargetBlock(y[:, None], ("share",), np.full(len(y), 250.0))
    cfg = MlpConfig(hidden_dim=16, dropout=0.0, lr=3e-3, min_delta=0.0, patience=30, seed=0)
    report = run_validation(X, targets, cfg, ValidationScheme.full_fit())
    share = report.mean("share", "share")
    level = report.mean("share", "level")
    assert share.mape < 0.5
    assert level.mape == pytest.approx(share.mape, rel=1e-12)
    assert level.rmse == pytest.approx(250.0 * share.rmse, rel=1e-12)
    assert level.mae == pytest.approx(250.0 * share.mae, rel=1e-12)
    assert report.to_csv().splitlines()[0] == "scheme,fold,target,scale,rmse,mae,mape"


def test_estimator_offset_template_and_ridge():
    X, y = affine_share_data(groups=3, months=12)
    cols = X.columns + ("signal_share_share",)
    base = np.clip(y + 0.01, 0.01, 0.99)
    Xo = FeatureMatrix(np.column_stack([X.values, base]), cols, X.groups, X.times)
    est = MlpEstimator(MlpConfig(hidden_dim=4, max_epochs=3, offset_feature="signal_{target}_share"))
    assert est.resolved(Xo, "share").offset_feature == "signal_share_share"
    assert est.resolved(X, "share").offset_feature is None
    ridge = RidgeEstimator(alpha=1e-6).fit(X, y)
    assert metrics(y, ridge.predict(X)).mape < 1.0


def test_feature_matrix_validation():
    with pytest.raises(SchemaError):
        FeatureMatrix(np.ones((1, 2)), ("a", "a"), ["05"], (MonthKey(2020, 1),))
    with pytest.raises(DomainError):
        FeatureMatrix(np.array([[np.nan]]), ("a",), ["05"], (MonthKey(2020, 1),))


@given(st.integers(0, 1000), st.sampled_from(["standardize", "minmax", "robust"]))
def test_scaler_invertible(seed, kind):
    X = np.random.default_rng(seed).standard_normal((20, 3)) * [1, 100, 0]
    s = Scaler.fit(X, kind)
    np.testing.assert_allclose(s.inverse(s.transform(X)), X, atol=1e-9)
