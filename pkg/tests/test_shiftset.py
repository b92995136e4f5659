import warnings

import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st

from oracles import grid_points, lp_vertex_optimum
from rope_explain.linexp import LinearExplanation
from rope_explain.oracle import CoordinateThresholdBlackBox
from rope_explain.shiftset import (DegenerateShiftSetWarning, Shift, ShiftError, ShiftSet, contains,
                                   grid_robust_loss, grid_shifts, marginal_dependence_audit,
                                   sample_shifts, surrogate_bound_audit, worst_case_shift,
                                   worst_case_shifts)

budgets = st.tuples(st.floats(0, 5, allow_nan=False), st.floats(0, 3, allow_nan=False))
gradients = st.integers(1, 6).flatmap(
    lambda n: st.lists(st.floats(-10, 10, allow_nan=False), min_size=n, max_size=n))


# --- construction and membership

def test_rejects_bad_parameters():
    for args in [(-1, 1, 2), (1, -0.1, 2), (1, 1, 0), (float("nan"), 1, 2), (1, 1, 1.5)]:
        with pytest.raises(ShiftError):
            ShiftSet(*args)


def test_contains_on_boundary():
    assert contains(ShiftSet(1.5, 1, 3), (1, 0, 0.5))


def test_contains_rejects_l1_violation():
    assert not contains(ShiftSet(1, 1, 2), (0.8, 0.8))


@given(budgets, st.integers(1, 6))
def test_origin_always_feasible(b, n):
    assert contains(ShiftSet(b[0], b[1], n), np.zeros(n))


def test_contains_dimension_mismatch():
    with pytest.raises(ShiftError):
        contains(ShiftSet(1, 1, 2), (0, 0, 0))


def test_shift_is_immutable():
    d = Shift([1.0, 2.0])
    with pytest.raises(ValueError):
        d.delta[0] = 5.0


# --- greedy inner maximizer

def test_worst_case_shift_example():
    d = worst_case_shift((3, -1, 2), ShiftSet(1.5, 1, 3))
    np.testing.assert_array_equal(d.delta, [1, 0, 0.5])
    assert float(np.dot(d.delta, [3, -1, 2])) == 4


def test_worst_case_shift_zero_gradient_is_origin():
    np.testing.assert_array_equal(worst_case_shift(np.zeros(4), ShiftSet(2, 1, 4)).delta, 0)


def test_worst_case_shift_single_coordinate():
    np.testing.assert_array_equal(worst_case_shift([-2], ShiftSet(1, 1, 1)).delta, [-1])


def test_ties_go_to_lower_index():
    np.testing.assert_array_equal(worst_case_shift([1, -1, 1], ShiftSet(1, 1, 3)).delta, [1, 0, 0])


def test_worst_case_shift_errors():
    S = ShiftSet(1, 1, 2)
    with pytest.raises(ShiftError):
        worst_case_shift([1, 2, 3], S)
    with pytest.raises(ShiftError):
        worst_case_shift([np.inf, 0], S)


@settings(max_examples=300)
@given(gradients, budgets)
def test_greedy_matches_vertex_enumeration(g, b):
    S = ShiftSet(b[0], b[1], len(g))
    d = worst_case_shift(g, S).delta
    assert contains(S, d)
    assert abs(float(np.dot(g, d)) - lp_vertex_optimum(g, *b)) <= 1e-9 * max(1.0, abs(lp_vertex_optimum(g, *b)))


@settings(max_examples=50, deadline=None)
@given(gradients, budgets)
def test_greedy_matches_scipy_linprog(g, b):
    from scipy.optimize import linprog
    n = len(g)
    g = np.asarray(g)
    # split d = p - q with p, q >= 0
    c = -np.concatenate([g, -g])
    A = np.ones((1, 2 * n))
    res = linprog(c, A_ub=A, b_ub=[b[0]], bounds=[(0, b[1])] * (2 * n), method="highs")
    d = worst_case_shift(g, ShiftSet(b[0], b[1], n)).delta
    assert float(g @ d) == pytest.approx(-res.fun, abs=1e-7)


@given(gradients, budgets)
def test_symmetry(g, b):
    S = ShiftSet(b[0], b[1], len(g))
    g = np.asarray(g)
    # exact ties are broken by index so the reflection is exact
    np.testing.assert_array_equal(worst_case_shift(-g, S).delta, -worst_case_shift(g, S).delta + 0.0)


@given(gradients, budgets, st.sampled_from([0.5, 2.0, 4.0, 1024.0]))
def test_scale_equivariance(g, b, t):
    # powers of two keep the ordering of |g| exact
    S = ShiftSet(b[0], b[1], len(g))
    g = np.asarray(g)
    np.testing.assert_array_equal(worst_case_shift(t * g, S).delta, worst_case_shift(g, S).delta)


def test_batched_matches_rowwise(rng):
    S = ShiftSet(1.7, 0.6, 5)
    G = rng.normal(size=(50, 5))
    D = worst_case_shifts(G, S)
    for g, d in zip(G, D):
        np.testing.assert_array_equal(worst_case_shift(g, S).delta, d)


# --- sampler

def test_sample_zero_draws(rng):
    assert sample_shifts(ShiftSet(1, 1, 3), 0, rng) == []


def test_sample_one_hot(rng):
    for d in sample_shifts(ShiftSet(1, 1, 4), 5, rng):
        assert sorted(np.abs(d.delta).tolist()) == [0, 0, 0, 1]


def test_sample_remainder_coordinate(rng):
    for d in sample_shifts(ShiftSet(1.5, 1, 3), 20, rng):
        assert sorted(np.abs(d.delta).tolist()) == [0, 0.5, 1]


def test_sample_degenerate_warns(rng):
    with pytest.warns(DegenerateShiftSetWarning):
        out = sample_shifts(ShiftSet(1, 0, 3), 4, rng)
    assert len(out) == 4 and all(not d.delta.any() for d in out)


def test_sample_negative_k(rng):
    with pytest.raises(ShiftError):
        sample_shifts(ShiftSet(1, 1, 3), -1, rng)


@settings(max_examples=200)
@given(budgets, st.integers(1, 8), st.integers(0, 20), st.integers(0, 2**32 - 1))
@example((1.0, 5e-324), 1, 1, 0)   # s0 / delta_max overflows to inf
def test_samples_are_feasible(b, n, k, seed):
    S = ShiftSet(b[0], b[1], n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateShiftSetWarning)
        draws = sample_shifts(S, k, np.random.default_rng(seed))
    assert len(draws) == k
    assert all(contains(S, d) for d in draws)


def test_sampler_is_seeded():
    S = ShiftSet(2.5, 1, 6)
    a = sample_shifts(S, 10, np.random.default_rng(3))
    b = sample_shifts(S, 10, np.random.default_rng(3))
    assert a == b


# --- grid and audits

def test_grid_matches_oracle():
    for s0, dm, n in [(1, 1, 2), (0.3, 0.2, 3), (0, 1, 2), (2, 0.5, 2)]:
        got = {tuple(np.round(p, 9)) for p in grid_shifts(ShiftSet(s0, dm, n))}
        want = {tuple(np.round(p, 9)) for p in grid_points(s0, dm, n)}
        assert got == want


def test_grid_dimension_cap():
    with pytest.raises(ShiftError):
        grid_shifts(ShiftSet(1, 1, 5))


def _logistic(w, b=0.0):
    return LinearExplanation(np.asarray(w, dtype=float), b)


def test_audits_vanish_when_explanation_is_black_box(rng):
    E = _logistic([1.0, -2.0], 0.3)
    X = rng.normal(size=(30, 2))
    S = ShiftSet(1, 0.5, 2)
    assert surrogate_bound_audit(E, E, X, S) == (0.0, 0.0)
    assert marginal_dependence_audit(E, E, X, 0, 0.5, S) == 0.0


def test_marginal_audit_zero_step(rng):
    X = rng.normal(size=(30, 2))
    assert marginal_dependence_audit(_logistic([1, 1]), CoordinateThresholdBlackBox(2, 0), X, 1, 0.0,
                                     ShiftSet(1, 1, 2)) == 0.0


def test_marginal_audit_errors(rng):
    X = rng.normal(size=(5, 2))
    E, B = _logistic([1, 1]), CoordinateThresholdBlackBox(2, 0)
    with pytest.raises(ShiftError):
        marginal_dependence_audit(E, B, X, 2, 0.1, ShiftSet(1, 1, 2))
    with pytest.raises(ShiftError):
        marginal_dependence_audit(E, B, X, 0, 0.6, ShiftSet(1, 0.5, 2))


def test_trivial_set_audit_is_plain_loss(rng):
    X = rng.normal(size=(40, 2))
    E, B = _logistic([0.5, 2.0]), CoordinateThresholdBlackBox(2, 0)
    lhs, rhs = surrogate_bound_audit(E, B, X, ShiftSet(0, 1, 2))
    plain = float(np.mean(np.abs(E.score(X) - B.batch(X))))
    assert lhs == pytest.approx(plain, abs=1e-15) and rhs == pytest.approx(plain, abs=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_surrogate_ordering(seed):
    r = np.random.default_rng(seed)
    X = r.normal(size=(20, 2))
    E = _logistic(r.normal(size=2), r.normal())
    B = CoordinateThresholdBlackBox(2, int(r.integers(2)))
    S = ShiftSet(r.uniform(0, 1.5), r.uniform(0.05, 1), 2)
    lhs, rhs = surrogate_bound_audit(E, B, X, S, 0.1)
    assert lhs <= rhs + 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_marginal_dependence_bound(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(2, 4))
    X = r.normal(size=(20, n))
    E = _logistic(r.normal(size=n), r.normal())
    B = CoordinateThresholdBlackBox(n, int(r.integers(n)))
    S = ShiftSet(r.uniform(0.1, 1.0), r.uniform(0.1, 1.0), n)
    i = int(r.integers(n))
    c = float(r.uniform(-1, 1) * min(S.s0, S.delta_max))
    onehot = np.zeros(n)
    onehot[i] = c
    eps = grid_robust_loss(E, B, X, S, 0.1 if n == 3 else 0.05, extra=onehot)
    assert marginal_dependence_audit(E, B, X, i, c, S) <= 2 * eps + 1e-12
