import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opebench import BanditFeedback, FitConfig, RewardModel, auc, cross_fit_split, fit_logistic, predict_q, rce
from opebench.data import DataError
from opebench.reward_model import ConvergenceWarning, _ContextAction, _descend, logistic_objective

from helpers import make_fb


def _logistic_data(n, seed, scale=1.0, d=3, A=3):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    a = rng.integers(A, size=n)
    w = scale * np.array([2.0, -1.5, 1.0])[:d]
    z = X @ w + scale * np.linspace(-1, 1, A)[a]
    y = (rng.random(n) < 1 / (1 + np.exp(-z))).astype(float)
    return BanditFeedback(A, 1, X, a, np.zeros(n, dtype=int), y, np.full(n, 1 / A))


# --- cross-fit split --------------------------------------------------------


def test_split_sizes_and_partition():
    fb = make_fb(np.zeros(10, dtype=int), np.arange(10) % 2, np.full(10, 0.5), timestamps=np.arange(10))
    train, ev = cross_fit_split(fb, 0.3, seed=1)
    assert (train.n_rounds, ev.n_rounds) == (3, 7)
    ids = sorted(train.timestamps.tolist() + ev.timestamps.tolist())
    assert ids == list(range(10))


def test_split_default_fraction():
    fb = make_fb(np.zeros(100, dtype=int), np.zeros(100), np.full(100, 0.5))
    train, _ = cross_fit_split(fb, seed=0)
    assert train.n_rounds == 30


def test_split_empty_part():
    fb = make_fb([0, 1], [0, 1], [0.5, 0.5])
    with pytest.raises(DataError):
        cross_fit_split(fb, 0.3, seed=0)


def test_split_deterministic():
    fb = make_fb(np.zeros(40, dtype=int), np.zeros(40), np.full(40, 0.5), timestamps=np.arange(40))
    a, _ = cross_fit_split(fb, 0.3, seed=8)
    b, _ = cross_fit_split(fb, 0.3, seed=8)
    np.testing.assert_array_equal(a.timestamps, b.timestamps)


# --- logistic fit -----------------------------------------------------------


def test_strong_signal_high_holdout_auc():
    model = fit_logistic(_logistic_data(4000, 0, scale=3.0))
    hold = _logistic_data(4000, 1, scale=3.0)
    q_obs, _ = predict_q(model, hold)
    assert auc(q_obs, hold.rewards) > 0.95
    assert model.metadata["converged"]


def test_pure_noise_holdout_auc_near_half():
    rng = np.random.default_rng(2)

    def noise(n):
        return BanditFeedback(
            3, 1, rng.normal(size=(n, 3)), rng.integers(3, size=n), np.zeros(n, dtype=int),
            (rng.random(n) < 0.3).astype(float), np.full(n, 1 / 3),
        )

    model = fit_logistic(noise(5000))
    hold = noise(20_000)
    q_obs, _ = predict_q(model, hold)
    assert 0.45 <= auc(q_obs, hold.rewards, tie_correction=True) <= 0.55


def test_strong_penalty_predicts_base_rate():
    fb = _logistic_data(2000, 3, scale=2.0)
    model = fit_logistic(fb, FitConfig(C=1e-8))
    _, table = predict_q(model, fb)
    np.testing.assert_allclose(table, fb.rewards.mean(), atol=1e-5)


def test_single_class_is_an_error():
    fb = make_fb([0, 1, 0], [1, 1, 1], [0.5] * 3)
    with pytest.raises(DataError, match="both"):
        fit_logistic(fb)


def test_non_binary_is_an_error():
    fb = make_fb([0, 1, 0], [1, 0.5, 0], [0.5] * 3)
    with pytest.raises(DataError, match="binary"):
        fit_logistic(fb)


def test_non_convergence_is_flagged_not_raised():
    with pytest.warns(ConvergenceWarning):
        model = fit_logistic(_logistic_data(500, 4), FitConfig(max_iter=1))
    assert model.metadata["converged"] is False
    assert model.metadata["iterations"] == 1


def test_fit_is_deterministic():
    fb = _logistic_data(800, 5)
    a, b = fit_logistic(fb), fit_logistic(fb)
    np.testing.assert_array_equal(a.theta, b.theta)


def test_objective_never_increases():
    fb = _logistic_data(1000, 6)
    hist = np.asarray(fit_logistic(fb).metadata["history"])
    assert np.all(np.diff(hist) <= 1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_logistic_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n, d, A = 40, 3, 4
    feats = _ContextAction(rng.normal(size=(n, d)), rng.integers(A, size=n), A)
    y = (rng.random(n) < 0.5).astype(float)
    sw = rng.random(n) + 0.5
    theta, b = rng.normal(size=d + A), float(rng.normal())
    f = lambda t, c: logistic_objective(feats, y, sw, t, c, 2.0)[0]  # noqa: E731
    _, g, gb = logistic_objective(feats, y, sw, theta, b, 2.0)
    h = 1e-6
    num = np.array([(f(theta + h * e, b) - f(theta - h * e, b)) / (2 * h) for e in np.eye(d + A)])
    num_b = (f(theta, b + h) - f(theta, b - h)) / (2 * h)
    np.testing.assert_allclose(np.append(g, gb), np.append(num, num_b), rtol=1e-5, atol=1e-9)


def test_descend_reaches_quadratic_minimum():
    target = np.array([1.0, -2.0, 0.5])
    obj = lambda t, c: (float(np.sum((t - target) ** 2) + (c - 3) ** 2), 2 * (t - target), 2 * (c - 3))  # noqa: E731
    theta, b, info = _descend(obj, np.zeros(3), 0.0, FitConfig(tol=1e-10))
    np.testing.assert_allclose(theta, target, atol=1e-9)
    assert b == pytest.approx(3.0, abs=1e-9)
    assert info["converged"]


# --- prediction ---------------------------------------------------------------


def test_zero_model_predicts_half():
    fb = _logistic_data(20, 7)
    _, table = predict_q(RewardModel(np.zeros(3), np.zeros(3), 0.0), fb)
    assert np.all(table == 0.5)


def test_per_record_matches_table():
    fb = _logistic_data(50, 8)
    q_obs, table = predict_q(fit_logistic(fb), fb)
    np.testing.assert_array_equal(q_obs, table[np.arange(50), fb.actions])


def test_monotone_in_intercept():
    fb = _logistic_data(30, 9)
    rng = np.random.default_rng(0)
    cc, ca = rng.normal(size=3), rng.normal(size=3)
    _, lo = predict_q(RewardModel(cc, ca, -0.3), fb)
    _, hi = predict_q(RewardModel(cc, ca, 0.4), fb)
    assert np.all(hi > lo)


def test_dimension_mismatch():
    fb = _logistic_data(10, 10)
    with pytest.raises(ValueError, match="context dims"):
        predict_q(RewardModel(np.zeros(2), np.zeros(3), 0.0), fb)


def test_model_json_round_trip(tmp_path):
    model = fit_logistic(_logistic_data(300, 11))
    model.save(tmp_path / "m.json")
    back = RewardModel.load(tmp_path / "m.json")
    np.testing.assert_array_equal(back.theta, model.theta)
    assert back.intercept == model.intercept
    assert back.metadata["objective"] == "log_likelihood"


# --- metrics ------------------------------------------------------------------


def test_rce_of_naive_predictor_is_zero():
    y = np.array([1, 0, 0, 1, 0, 0, 0, 1.0])
    assert rce(np.full(8, y.mean()), y) == pytest.approx(0.0, abs=1e-15)


def test_rce_of_perfect_predictor_approaches_one():
    y = np.array([1, 0, 0, 1, 0.0])
    value = rce(y, y)
    assert 0.99 < value < 1.0


def test_rce_single_class():
    with pytest.raises(ValueError):
        rce([0.3, 0.4], [1, 1])


def test_rce_order_invariant():
    rng = np.random.default_rng(1)
    y = (rng.random(200) < 0.3).astype(float)
    y[:2] = [0, 1]
    q = rng.random(200)
    perm = rng.permutation(200)
    assert rce(q[perm], y[perm]) == pytest.approx(rce(q, y), rel=1e-12)


def test_auc_extremes():
    y = np.array([0, 0, 1, 1])
    assert auc([0.1, 0.2, 0.8, 0.9], y) == 1.0
    assert auc([0.9, 0.8, 0.2, 0.1], y) == 0.0
    assert auc([0.5] * 4, y) == 0.0
    assert auc([0.5] * 4, y, tie_correction=True) == 0.5


def _auc_pairs(s, y, ties):
    pos = [a for a, l in zip(s, y) if l == 1]
    neg = [b for b, l in zip(s, y) if l == 0]
    total = sum((a > b) + (0.5 * (a == b) if ties else 0) for a, b in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


@given(
    st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=40).filter(
        lambda xs: len({lab for _, lab in xs}) == 2
    ),
    st.booleans(),
)
@settings(max_examples=100, deadline=None)
def test_auc_matches_pairwise_definition(pairs, ties):
    s = [float(v) for v, _ in pairs]
    y = [float(lab) for _, lab in pairs]
    assert auc(s, y, tie_correction=ties) == pytest.approx(_auc_pairs(s, y, ties), abs=1e-12)


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_auc_invariant_to_increasing_transform(seed):
    rng = np.random.default_rng(seed)
    y = np.array([0, 1] + list((rng.random(30) < 0.5).astype(int)))
    s = rng.normal(size=y.size)
    assert auc(np.exp(3 * s) + 1, y) == auc(s, y)
