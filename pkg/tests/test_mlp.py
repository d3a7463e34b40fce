import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deforest.dataset import SampleSet
from deforest.mlp import (
    DivergenceError,
    MlpModel,
    TrainConfig,
    evaluate_binary,
    forward,
    init_model,
    load_model,
    loss_and_gradient,
    model_from_text,
    model_to_text,
    residual_jacobian,
    roc_auc,
    save_model,
    train_backprop,
    train_lm,
)
from oracles import central_differences, confusion_by_hand, logistic, mlp_output_scalar, rel_error

XOR_X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
XOR_Y = np.array([0, 1, 1, 0], dtype=float)


def random_model(rng, n_in=3, n_hidden=5, scale=1.0):
    return MlpModel(
        rng.normal(size=(n_hidden, n_in)) * scale,
        rng.normal(size=n_hidden) * scale,
        rng.normal(size=(1, n_hidden)) * scale,
        rng.normal(size=1) * scale,
    )


def logistic_data(rng, n=200, noise=0.3):
    """Targets from a fixed 3-input logistic rule plus Gaussian noise."""
    x = rng.random((n, 3))
    z = 8 * x[:, 0] - 6 * x[:, 1] + 2 * x[:, 2] - 2 + noise * rng.normal(size=n)
    return x, (z > 0).astype(float)


def test_init_deterministic_and_shaped():
    a, b = init_model(3, 8, seed=11), init_model(3, 8, seed=11)
    assert a == b
    assert a.W1.shape == (8, 3) and a.b1.shape == (8,)
    assert a.W2.shape == (1, 8) and a.b2.shape == (1,)
    assert not (a == init_model(3, 8, seed=12))


def test_init_bounds():
    m = init_model(3, 8, seed=0)
    assert np.abs(m.W1).max() <= math.sqrt(6 / 11)
    assert np.abs(m.W2).max() <= math.sqrt(6 / 9)
    assert not m.b1.any() and not m.b2.any()


@pytest.mark.parametrize("sizes", [(0, 4), (3, 0), (-1, 2)])
def test_init_rejects_nonpositive(sizes):
    with pytest.raises(ValueError):
        init_model(*sizes)


def test_zero_model_outputs_half():
    m = MlpModel(np.zeros((4, 3)), np.zeros(4), np.zeros((1, 4)), np.zeros(1))
    for x in ([0, 0, 0], [5, -3, 100]):
        assert forward(m, x) == 0.5


def test_forward_hand_computed_2_2_1():
    m = MlpModel(np.ones((2, 2)), np.zeros(2), np.ones((1, 2)), np.zeros(1))
    x = [1.0, 2.0]
    h = logistic(3.0)
    assert forward(m, x) == pytest.approx(logistic(2 * h), abs=1e-15)
    assert forward(m, x) == pytest.approx(mlp_output_scalar(m.W1, m.b1, m.W2, m.b2, x), abs=1e-15)


def test_forward_batch_matches_scalar_loop(rng):
    m = random_model(rng)
    x = rng.normal(size=(10, 3))
    batch = forward(m, x)
    assert batch.shape == (10,)
    for row, y in zip(x, batch):
        assert y == pytest.approx(mlp_output_scalar(m.W1, m.b1, m.W2, m.b2, row), abs=1e-14)


def test_forward_deterministic(rng):
    m = random_model(rng)
    x = rng.normal(size=3)
    assert forward(m, x) == forward(m, x)


def test_forward_dimension_mismatch():
    with pytest.raises(ValueError):
        forward(init_model(3, 2), [1.0, 2.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3), st.integers(0, 1000))
def test_forward_strictly_inside_unit_interval(x, seed):
    m = random_model(np.random.default_rng(seed), scale=10.0)
    y = forward(m, x)
    assert 0.0 < y < 1.0


def test_param_vector_round_trip(rng):
    m = random_model(rng)
    assert m.with_params(m.params()) == m
    assert m.n_params == 5 * 3 + 5 + 5 + 1


def test_perfect_predictions_zero_loss(rng):
    m = random_model(rng)
    x = rng.normal(size=(6, 3))
    mse, grad = loss_and_gradient(m, (x, forward(m, x)))
    assert mse == 0.0
    assert not grad.any()


def test_gradient_matches_finite_differences(rng):
    m = random_model(rng, 3, 5)
    x, t = rng.normal(size=(20, 3)), rng.integers(0, 2, 20)
    _, grad = loss_and_gradient(m, (x, t))
    fd = central_differences(lambda th: loss_and_gradient(m.with_params(th), (x, t))[0], m.params())
    assert rel_error(grad, fd) < 1e-6


def test_single_sample_gradient_by_hand():
    W1 = np.array([[0.5, -0.2], [0.1, 0.3]])
    b1 = np.array([0.05, -0.1])
    W2 = np.array([[0.7, -0.4]])
    b2 = np.array([0.2])
    m = MlpModel(W1, b1, W2, b2)
    x, t = [1.0, 2.0], 1.0
    # scalar chain rule
    h = [logistic(W1[j][0] * x[0] + W1[j][1] * x[1] + b1[j]) for j in range(2)]
    y = logistic(W2[0][0] * h[0] + W2[0][1] * h[1] + b2[0])
    dz2 = 2 * (y - t) * y * (1 - y)
    expected = []
    for j in range(2):
        dz1 = dz2 * W2[0][j] * h[j] * (1 - h[j])
        expected += [dz1 * x[0], dz1 * x[1]]
    expected += [dz2 * W2[0][j] * h[j] * (1 - h[j]) for j in range(2)]
    expected += [dz2 * h[0], dz2 * h[1], dz2]
    mse, grad = loss_and_gradient(m, ([x], [t]))
    assert mse == pytest.approx((y - t) ** 2, abs=1e-15)
    np.testing.assert_allclose(grad, expected, rtol=1e-12, atol=1e-15)


def test_empty_batch_rejected():
    with pytest.raises(ValueError, match="empty"):
        loss_and_gradient(init_model(3, 2), (np.zeros((0, 3)), np.zeros(0)))


def test_jacobian_rows_match_finite_differences(rng):
    m = random_model(rng, 3, 8)
    x, t = rng.normal(size=(15, 3)), rng.integers(0, 2, 15)
    r, J = residual_jacobian(m, (x, t))
    assert J.shape == (15, m.n_params)
    fd = central_differences(lambda th: residual_jacobian(m.with_params(th), (x, t))[0], m.params())
    for i in range(15):
        assert rel_error(J[i], fd[i]) < 1e-6
    np.testing.assert_allclose(r, forward(m, x) - t)


def test_jacobian_consistent_with_gradient(rng):
    m = random_model(rng)
    x, t = rng.normal(size=(12, 3)), rng.integers(0, 2, 12)
    r, J = residual_jacobian(m, (x, t))
    _, grad = loss_and_gradient(m, (x, t))
    np.testing.assert_allclose(2 * J.T @ r / len(r), grad, rtol=1e-12, atol=1e-15)


def test_multi_output_jacobian(rng):
    m = MlpModel(rng.normal(size=(4, 2)), rng.normal(size=4), rng.normal(size=(2, 4)), rng.normal(size=2))
    x, t = rng.normal(size=(5, 2)), rng.integers(0, 2, (5, 2))
    _, J = residual_jacobian(m, (x, t))
    fd = central_differences(lambda th: residual_jacobian(m.with_params(th), (x, t))[0], m.params())
    assert rel_error(J, fd) < 1e-6


# configuration


@pytest.mark.parametrize(
    "kwargs",
    [
        {"patience": 0},
        {"algorithm": "sgd"},
        {"lambda_up": 1.0},
        {"lambda_down": 1.0},
        {"learning_rate": 0.0},
        {"max_epochs": 0},
    ],
)
def test_train_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_algorithm_mismatch():
    with pytest.raises(ValueError, match="expected 'lm'"):
        train_lm(init_model(2, 2), (XOR_X, XOR_Y), None, TrainConfig(algorithm="backprop"))


# backprop


def test_xor_backprop():
    cfg = TrainConfig(algorithm="backprop", learning_rate=0.5, max_epochs=20_000, patience=20_000, seed=0)
    wins = 0
    for seed in range(5):
        model, report = train_backprop(init_model(2, 4, seed), (XOR_X, XOR_Y), None, cfg)
        wins += loss_and_gradient(model, (XOR_X, XOR_Y))[0] < 0.01
    assert wins >= 4


def test_single_sample_descent_monotone(rng):
    m = random_model(rng, 3, 4)
    cfg = TrainConfig(algorithm="backprop", learning_rate=0.05, max_epochs=300, patience=300)
    _, report = train_backprop(m, ([[0.2, 0.5, 0.9]], [1.0]), None, cfg)
    h = np.array(report.train_mse_history)
    assert len(h) == report.epochs_run == 300
    assert (np.diff(h) <= 0).all()


def test_backprop_divergence_raises(rng):
    m = random_model(rng, 3, 4)
    x = rng.normal(size=(10, 3)) * 1e200
    cfg = TrainConfig(algorithm="backprop", learning_rate=1e300, max_epochs=50)
    with pytest.raises(DivergenceError) as exc:
        train_backprop(m, (x, rng.integers(0, 2, 10)), None, cfg)
    assert exc.value.last_finite_epoch >= 0


def test_early_stop_restores_best(rng):
    x, t = logistic_data(rng, 60, noise=3.0)
    xv, tv = logistic_data(rng, 60, noise=3.0)
    cfg = TrainConfig(algorithm="backprop", learning_rate=2.0, max_epochs=3000, patience=25)
    model, report = train_backprop(init_model(3, 8, 1), (x, t), (xv, tv), cfg)
    best_val = loss_and_gradient(model, (xv, tv))[0]
    assert best_val == pytest.approx(report.best_val_mse, abs=1e-15)
    later = report.val_mse_history[report.best_epoch:]
    assert all(best_val <= v for v in later)
    if report.stop_reason == "early_stop":
        assert report.epochs_run - report.best_epoch == cfg.patience


def test_backprop_deterministic(rng):
    x, t = logistic_data(rng, 50)
    cfg = TrainConfig(algorithm="backprop", max_epochs=200)
    a = train_backprop(init_model(3, 6, 4), (x, t), None, cfg)[0]
    b = train_backprop(init_model(3, 6, 4), (x, t), None, cfg)[0]
    assert a.params().tobytes() == b.params().tobytes()


# Levenberg-Marquardt


def test_lm_zero_residuals_stop_immediately(rng):
    m = random_model(rng)
    x = rng.normal(size=(8, 3))
    model, report = train_lm(m, (x, forward(m, x)), None, TrainConfig())
    assert report.stop_reason == "grad_tol"
    assert report.epochs_run == 0
    assert model == m


def test_lm_large_damping_gives_tiny_step(rng):
    m = random_model(rng)
    x, t = rng.normal(size=(10, 3)), rng.integers(0, 2, 10)
    r, J = residual_jacobian(m, (x, t))
    steps = []
    for lam in (1e2, 1e5, 1e8):
        steps.append(np.linalg.norm(np.linalg.solve(J.T @ J + lam * np.eye(m.n_params), -J.T @ r)))
    assert steps[0] > steps[1] > steps[2] and steps[2] < 1e-7


def test_lm_logistic_data(rng):
    x, t = logistic_data(rng, 200)
    xv, tv = logistic_data(rng, 200)
    cfg = TrainConfig(algorithm="lm", max_epochs=200, patience=20)
    model, report = train_lm(init_model(3, 8, 0), (x, t), (xv, tv), cfg)
    assert report.epochs_run <= 200
    assert evaluate_binary(model, (xv, tv))["accuracy"] >= 0.95
    assert (np.diff(report.train_mse_history) < 0).all()


def test_lm_deterministic(rng):
    x, t = logistic_data(rng, 80)
    cfg = TrainConfig(max_epochs=30)
    a = train_lm(init_model(3, 8, 2), (x, t), None, cfg)[0]
    b = train_lm(init_model(3, 8, 2), (x, t), None, cfg)[0]
    assert a.params().tobytes() == b.params().tobytes()


def test_lm_accepts_sample_sets(rng):
    x, t = logistic_data(rng, 40)
    s = SampleSet(("a", "b", "c"), np.zeros((40, 2)), x, t)
    model, report = train_lm(init_model(3, 4, 0), s, s, TrainConfig(max_epochs=5))
    assert report.epochs_run <= 5


# evaluation


def test_evaluate_perfect_model():
    # a steep single-input model that separates 0 from 1
    m = MlpModel([[20.0]], [-10.0], [[40.0]], [-20.0])
    x = np.array([[0.0]] * 5 + [[1.0]] * 5)
    y = np.array([0] * 5 + [1] * 5)
    res = evaluate_binary(m, (x, y))
    assert res["accuracy"] == 1.0
    assert res["fp"] == 0 and res["fn"] == 0
    assert res["auc"] == 1.0


def test_evaluate_constant_half_model_predicts_ones():
    m = MlpModel(np.zeros((2, 3)), np.zeros(2), np.zeros((1, 2)), np.zeros(1))
    y = np.array([1, 0, 1, 1, 0, 0, 0, 1, 1, 1])
    res = evaluate_binary(m, (np.zeros((10, 3)), y), threshold=0.5)
    assert res["tp"] + res["fp"] == 10
    assert res["accuracy"] == pytest.approx(y.mean())


def test_evaluate_matches_hand_count(rng):
    m = random_model(rng)
    x, y = rng.normal(size=(20, 3)), rng.integers(0, 2, 20)
    for thr in (0.3, 0.5, 0.7):
        res = evaluate_binary(m, (x, y), thr)
        tp, fp, tn, fn = confusion_by_hand(forward(m, x), y, thr)
        assert (res["tp"], res["fp"], res["tn"], res["fn"]) == (tp, fp, tn, fn)
        assert res["accuracy"] == (tp + tn) / 20


def test_evaluate_empty():
    with pytest.raises(ValueError):
        evaluate_binary(init_model(3, 2), (np.zeros((0, 3)), np.zeros(0)))


def test_roc_auc_pairwise_oracle(rng):
    s = rng.integers(0, 5, 40).astype(float)
    y = rng.integers(0, 2, 40)
    pos, neg = s[y == 1], s[y == 0]
    pairs = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    assert roc_auc(s, y) == pytest.approx(pairs / (len(pos) * len(neg)), abs=1e-12)


# serialization


def test_model_text_round_trip(tmp_path, rng):
    m = random_model(rng, 3, 8)
    save_model(m, tmp_path / "m.txt")
    back = load_model(tmp_path / "m.txt")
    assert back.params().tobytes() == m.params().tobytes()
    assert model_to_text(back) == model_to_text(m)
    assert model_to_text(m).splitlines()[0] == "mlp 3 8 1 logistic"


def test_model_text_bad_section(rng):
    text = model_to_text(random_model(rng)).replace("W2", "W3")
    with pytest.raises(ValueError, match="expected section 'W2'"):
        model_from_text(text)
