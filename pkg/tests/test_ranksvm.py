import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fast0tag.errors import DataError
from fast0tag.ranksvm import SvmOptions, svm_objective, train_rank_svm, violated_constraints

E1, E2 = np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])


def test_objective_examples():
    rng = np.random.default_rng(0)
    pos, neg = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
    assert svm_objective(np.zeros(4), pos, neg, 1.0) == 15.0
    assert svm_objective([0.5, -0.5], E1, E2, 1.0) == pytest.approx(0.25, abs=1e-15)
    assert svm_objective([1.0, 0.0], E1, -E1, 2.0) == pytest.approx(1.0, abs=1e-15)


def test_violations_examples():
    assert violated_constraints([1.0, 0.0], E1, E2) == 0
    rng = np.random.default_rng(1)
    assert violated_constraints(np.zeros(3), rng.normal(size=(2, 3)), rng.normal(size=(4, 3))) == 8
    # w.p2 = w.n = -0.5: a tie counts as a violation
    assert violated_constraints([0.5, -0.5], [[1.0, 0.0], [0.0, 1.0]], [[-1.0, 0.0]]) == 1


def test_closed_form_lambda_1():
    res = train_rank_svm(E1, E2, 1.0)
    assert res.objective == pytest.approx(0.25, abs=1e-3)
    np.testing.assert_allclose(res.w, [0.5, -0.5], atol=2e-2)


def test_closed_form_lambda_100():
    res = train_rank_svm(E1, E2, 100.0)
    assert res.objective == pytest.approx(0.99, abs=1e-3)
    np.testing.assert_allclose(res.w, [0.01, -0.01], atol=1e-3)


def test_identical_vectors_terminate():
    res = train_rank_svm(E1, E1, 1.0, SvmOptions(max_iterations=500))
    assert res.objective >= 1.0 - 1e-12
    assert res.iterations <= 500


def test_errors():
    with pytest.raises(DataError):
        train_rank_svm(np.zeros((0, 2)), E2, 1.0)
    with pytest.raises(DataError, match="lambda"):
        train_rank_svm(E1, E2, 0.0)
    with pytest.raises(DataError, match="dimension"):
        svm_objective([1.0, 0.0, 0.0], E1, E2, 1.0)


def test_deterministic():
    rng = np.random.default_rng(3)
    pos, neg = rng.normal(size=(4, 8)), rng.normal(size=(9, 8))
    a, b = train_rank_svm(pos, neg, 0.1), train_rank_svm(pos, neg, 0.1)
    assert np.array_equal(a.w, b.w) and a.iterations == b.iterations


vecs = arrays(np.float64, st.tuples(st.integers(1, 4), st.just(3)),
              elements=st.floats(-2, 2, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(vecs, vecs, st.sampled_from([1e-3, 0.1, 1.0, 10.0]))
def test_best_iterate_never_worse_than_zero(pos, neg, lam):
    res = train_rank_svm(pos, neg, lam, SvmOptions(max_iterations=200))
    start = len(pos) * len(neg)
    assert res.objective <= start + 1e-12
    assert res.objective == pytest.approx(svm_objective(res.w, pos, neg, lam), rel=1e-12, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_separable_rules_are_solved(seed):
    # Tags scored by a planted direction, relevant = above a gap.
    rng = np.random.default_rng(seed)
    u = rng.normal(size=6)
    u /= np.linalg.norm(u)
    tags = rng.normal(size=(20, 6))
    s = tags @ u
    cut = np.median(s)
    pos, neg = tags[s > cut + 0.2], tags[s < cut - 0.2]
    if len(pos) == 0 or len(neg) == 0:
        return
    res = train_rank_svm(pos, neg, 1e-3)
    assert violated_constraints(res.w, pos, neg) == 0


def test_huge_lambda_direction_is_mean_offset():
    # With every hinge active the optimum is w* = g / lambda, g = |N| sum p - |P| sum n,
    # with objective |P||N| - ||g||^2 / (2 lambda). Ranking by w* ignores lambda's size.
    rng = np.random.default_rng(8)
    pos, neg = rng.normal(size=(4, 6)), rng.normal(size=(9, 6))
    lam = 1e6
    g = len(neg) * pos.sum(0) - len(pos) * neg.sum(0)
    res = train_rank_svm(pos, neg, lam)
    assert res.objective == pytest.approx(len(pos) * len(neg) - g @ g / (2 * lam), rel=1e-6)
    assert res.w @ g / (np.linalg.norm(res.w) * np.linalg.norm(g)) > 0.99
