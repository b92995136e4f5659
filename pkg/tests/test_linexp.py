import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import grid_points, logistic_loss, plain_sgd_logistic
from rope_explain.bench import intro_scenario
from rope_explain.linexp import (BlackBoxQueryError, LinearExplanation, TrainConfig,
                                 TrainingDivergedError, mean_loss, param_gradient,
                                 plain_empirical_loss, robust_empirical_loss, robust_pointwise_losses,
                                 train_robust_linear)
from rope_explain.oracle import BlackBox, CoordinateThresholdBlackBox
from rope_explain.shiftset import ShiftSet


# --- prediction

def test_identity_prediction():
    E = LinearExplanation(np.array([1.0, -1.0]), 0.0, "identity")
    assert E.predict([2, 1]) == 1
    assert E.threshold == 0


def test_boundary_goes_to_one():
    assert LinearExplanation(np.zeros(2), 0.0).predict([3, -4]) == 1


def test_logistic_prediction():
    assert LinearExplanation(np.array([1.0]), -3.0).predict([1]) == 0


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        LinearExplanation(np.ones(2), 0.0).predict([1, 2, 3])


def test_score_in_unit_interval(rng):
    E = LinearExplanation(rng.normal(size=3) * 50, 2.0)
    s = E.score(rng.normal(size=(100, 3)))
    assert np.all((s >= 0) & (s <= 1))


@given(st.lists(st.floats(-1e300, 1e300, allow_nan=False), min_size=1, max_size=6),
       st.floats(-1e300, 1e300, allow_nan=False), st.sampled_from(["logistic", "identity"]))
def test_json_round_trip_bit_exact(w, b, link):
    E = LinearExplanation(np.array(w), b, link, feature_names=tuple(f"f{i}" for i in range(len(w))))
    F = LinearExplanation.from_json(json.loads(E.dumps()))
    assert F.weights.tobytes() == E.weights.tobytes()
    assert F.bias == E.bias and F.link == E.link and F.threshold == E.threshold
    assert F.feature_names == E.feature_names


# --- gradients

@settings(max_examples=60)
@given(st.integers(0, 10**6), st.sampled_from(["logistic", "identity"]))
def test_param_gradient_finite_differences(seed, link):
    r = np.random.default_rng(seed)
    n = int(r.integers(1, 5))
    X = r.normal(size=(8, n)) + r.uniform(-1, 1, size=n)   # a shifted batch
    y = r.integers(0, 2, 8).astype(float)
    w, b, l2 = r.normal(size=n), float(r.normal()), 1e-4
    gw, gb = param_gradient(w, b, X, y, link, l2)
    h = 1e-5
    num = np.zeros(n + 1)
    theta = np.append(w, b)
    for j in range(n + 1):
        e = np.zeros(n + 1)
        e[j] = h
        up, dn = theta + e, theta - e
        num[j] = (mean_loss(up[:-1], up[-1], X, y, link, l2) - mean_loss(dn[:-1], dn[-1], X, y, link, l2)) / (2 * h)
    ana = np.append(gw, gb)
    assert np.linalg.norm(ana - num) <= 1e-4 * max(np.linalg.norm(num), 1e-3)


# --- training

def test_reduction_to_plain_sgd(rng):
    X = rng.normal(size=(300, 3))
    B = CoordinateThresholdBlackBox(3, 2)
    E = train_robust_linear(X, B, ShiftSet(0, 1, 3), TrainConfig(seed=4, epochs=5))
    w, b = plain_sgd_logistic(X, B.batch(X), seed=4, epochs=5)
    np.testing.assert_allclose(E.weights, w, atol=1e-6, rtol=0)
    assert abs(E.bias - b) <= 1e-6


def test_sign_recovery(rng):
    X = rng.normal(size=(200, 1))
    E = train_robust_linear(X, CoordinateThresholdBlackBox(1, 0), ShiftSet(0.5, 0.5, 1), TrainConfig(seed=0))
    assert E.weights[0] > 0


def test_intro_scenario_prefers_the_true_feature():
    sc = intro_scenario(0, n_train=1000, n_shift=5000)
    E = train_robust_linear(sc.train, sc.black_box, ShiftSet(1, 1, 2), TrainConfig(seed=0))
    assert abs(E.weights[1]) > abs(E.weights[0])
    assert np.mean(E.predict_batch(sc.shifted) == sc.black_box.batch(sc.shifted)) >= 0.9


def test_training_is_deterministic(rng):
    X = rng.normal(size=(120, 2))
    B = CoordinateThresholdBlackBox(2, 0)
    cfg = TrainConfig(seed=11, epochs=4)
    a = train_robust_linear(X, B, ShiftSet(1, 0.5, 2), cfg)
    b = train_robust_linear(X, B, ShiftSet(1, 0.5, 2), cfg)
    assert a.weights.tobytes() == b.weights.tobytes() and a.bias == b.bias


def test_black_box_queried_at_shifted_points(rng):
    seen = []

    class Recorder(CoordinateThresholdBlackBox):
        def batch(self, X):
            seen.append(np.array(X))
            return super().batch(X)

    X = rng.normal(size=(40, 2)) * 0.1
    train_robust_linear(X, Recorder(2, 0), ShiftSet(1, 1, 2), TrainConfig(seed=0, epochs=1))
    pts = np.vstack(seen[1:])
    # the data sit within ~0.3 of the origin; shifted queries land a full delta_max away
    assert np.abs(pts).max() > 0.5


def test_query_failure_names_samples(rng):
    class Flaky(BlackBox):
        def __init__(self):
            super().__init__(2)
            self.calls = 0

        def batch(self, X):
            self.calls += 1
            if self.calls > 1:
                raise RuntimeError("down")
            return np.zeros(len(X), dtype=int) + (np.asarray(X)[:, 0] > 0)

    with pytest.raises(BlackBoxQueryError, match="sample indices"):
        train_robust_linear(rng.normal(size=(10, 2)), Flaky(), ShiftSet(1, 1, 2), TrainConfig(seed=0))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_detected(rng):
    X = rng.normal(size=(50, 2)) * 1e3
    with pytest.raises(TrainingDivergedError):
        train_robust_linear(X, CoordinateThresholdBlackBox(2, 0), ShiftSet(0, 0, 2),
                            TrainConfig(seed=0, learning_rate=1e6, loss="squared"))


def test_config_validation():
    for kw in [dict(learning_rate=0), dict(batch_size=0), dict(l2_penalty=-1), dict(loss="hinge")]:
        with pytest.raises(ValueError):
            TrainConfig(seed=0, **kw)


# --- robust loss

def test_robust_loss_trivial_set_is_plain(rng):
    X = rng.normal(size=(60, 2))
    E = LinearExplanation(np.array([1.0, 0.3]), 0.1)
    B = CoordinateThresholdBlackBox(2, 1)
    assert robust_empirical_loss(E, X, B, ShiftSet(0, 1, 2)) == pytest.approx(plain_empirical_loss(E, X, B))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_robust_loss_dominates_plain(seed):
    r = np.random.default_rng(seed)
    X = r.normal(size=(30, 2))
    E = LinearExplanation(r.normal(size=2), float(r.normal()))
    B = CoordinateThresholdBlackBox(2, int(r.integers(2)))
    S = ShiftSet(r.uniform(0, 2), r.uniform(0, 1), 2)
    plain = plain_empirical_loss(E, X, B)
    assert robust_empirical_loss(E, X, B, S) >= plain - 1e-12
    assert robust_empirical_loss(E, X, B, S, ("sampled", 5, seed)) >= plain - 1e-12


def test_sampled_loss_monotone_in_k(rng):
    X = rng.normal(size=(50, 3))
    E = LinearExplanation(np.array([0.4, -1.0, 2.0]), 0.0)
    B = CoordinateThresholdBlackBox(3, 0)
    S = ShiftSet(1.5, 1, 3)
    # same seed: the first k draws are a prefix of the first k + 1
    vals = [robust_empirical_loss(E, X, B, S, ("sampled", k, 7)) for k in range(0, 12)]
    assert all(a <= b + 1e-15 for a, b in zip(vals, vals[1:]))


def _grid_robust_logistic(E, X, B, s0, dm):
    y = B.batch(X).astype(float)
    worst = logistic_loss(X @ E.weights + E.bias, y)
    for d in grid_points(s0, dm, X.shape[1]):
        Xs = X + d
        worst = np.maximum(worst, logistic_loss(Xs @ E.weights + E.bias, B.batch(Xs)))
    return float(worst.mean())


def test_linearized_close_to_grid_oracle(rng):
    X = rng.normal(size=(300, 2))
    B = CoordinateThresholdBlackBox(2, 0)
    S = ShiftSet(0.2, 0.2, 2)
    E = train_robust_linear(X, B, S, TrainConfig(seed=0))
    oracle = _grid_robust_logistic(E, X, B, 0.2, 0.2)
    assert abs(robust_empirical_loss(E, X, B, S) - oracle) <= 0.1 * oracle


def test_linearized_exact_when_labels_cannot_flip(rng):
    # every point is farther than delta_max from the black-box boundary
    X = rng.normal(size=(200, 2))
    X[:, 0] += 1.5 * np.sign(X[:, 0])
    E = LinearExplanation(np.array([1.5, 0.5]), 0.0)
    B = CoordinateThresholdBlackBox(2, 0)
    got = robust_empirical_loss(E, X, B, ShiftSet(1, 1, 2))
    assert got == pytest.approx(_grid_robust_logistic(E, X, B, 1, 1), rel=1e-12)


def test_bad_mode(rng):
    with pytest.raises(ValueError):
        robust_pointwise_losses(LinearExplanation(np.ones(2), 0.0), rng.normal(size=(3, 2)),
                                CoordinateThresholdBlackBox(2, 0), ShiftSet(1, 1, 2), "exact")
