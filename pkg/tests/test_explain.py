import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oran_anomaly.explain import (ImportanceReport, global_importance, permutation_importance,
                                  sample_background, shapley_matrix, shapley_values)
from oran_anomaly.forest import RandomForest


def _exact_shapley(f, x, B):
    """Shapley values of v(S) = mean_b f(x_S, b_rest) by full subset enumeration."""
    d = len(x)

    def v(S):
        Z = B.copy()
        Z[:, list(S)] = x[list(S)]
        return float(np.mean(f(Z)))

    phi = np.zeros(d)
    for j in range(d):
        others = [k for k in range(d) if k != j]
        for r in range(d):
            for S in itertools.combinations(others, r):
                w = math.factorial(r) * math.factorial(d - r - 1) / math.factorial(d)
                phi[j] += w * (v(S + (j,)) - v(S))
    return phi


def _g(Z):
    return Z[:, 0] * Z[:, 1] + np.sin(Z[:, 2]) + np.maximum(Z[:, 0], Z[:, 2])


def test_matches_exact_enumeration_d3():
    rng = np.random.default_rng(0)
    B = rng.normal(size=(8, 3))
    x = np.array([1.2, -0.7, 0.4])
    est, se = shapley_values(_g, x, B, n_samples=20_000, seed=1)
    exact = _exact_shapley(_g, x, B)
    np.testing.assert_allclose(est, exact, atol=1e-2)
    assert np.all(se < 1e-2)


def test_additive_model_closed_form():
    w = np.array([2.0, -1.0, 0.5, 3.0])
    B = np.random.default_rng(1).normal(size=(50, 4))
    x = np.array([1.0, 2.0, -1.0, 0.5])
    est, _ = shapley_values(lambda Z: Z @ w, x, B, n_samples=10_000, seed=0)
    np.testing.assert_allclose(est, w * (x - B.mean(axis=0)), atol=1e-2 * np.abs(w).max() * 4)


def test_efficiency_exact_with_single_background_row():
    b = np.array([[0.3, -0.2, 1.0]])
    x = np.array([1.0, 1.0, 1.0])
    est, _ = shapley_values(_g, x, b, n_samples=7, seed=3)
    assert est.sum() == pytest.approx(float(_g(x[None])[0] - _g(b)[0]), abs=1e-12)


@settings(max_examples=30)
@given(st.integers(0, 2**31))
def test_efficiency_within_three_standard_errors(seed):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(30, 3))
    x = rng.normal(size=3)
    n = 400
    est, _ = shapley_values(_g, x, B, n_samples=n, seed=seed)
    fb = _g(B)
    target = float(_g(x[None])[0] - fb.mean())
    # the sum telescopes to f(x) - f(b) for the sampled rows b
    assert abs(est.sum() - target) <= 3 * fb.std() / math.sqrt(n) + 1e-9


def test_dummy_feature_is_exactly_zero():
    B = np.random.default_rng(2).normal(size=(20, 4))
    est, se = shapley_values(lambda Z: Z[:, 0] ** 2 + Z[:, 1], np.ones(4), B, n_samples=200, seed=0)
    assert est[2] == 0.0 and est[3] == 0.0
    assert se[2] == 0.0


def test_symmetric_features_get_equal_credit():
    f = lambda Z: np.tanh(Z[:, 0] + Z[:, 1]) + 0.1 * Z[:, 2]  # noqa: E731
    B = np.random.default_rng(4).normal(size=(10, 3))
    B = np.vstack([B, B[:, [1, 0, 2]]])  # background symmetric in features 0 and 1
    x = np.array([0.8, 0.8, -1.0])
    exact = _exact_shapley(f, x, B)
    assert exact[0] == pytest.approx(exact[1], abs=1e-12)
    est, se = shapley_values(f, x, B, n_samples=20_000, seed=2)
    assert abs(est[0] - est[1]) < 3 * math.hypot(se[0], se[1])


def test_constant_model_gets_no_credit():
    B = np.random.default_rng(0).normal(size=(5, 3))
    est, _ = shapley_values(lambda Z: np.full(len(Z), 4.2), np.zeros(3), B, n_samples=50)
    np.testing.assert_array_equal(est, 0.0)


def test_shapley_validation_and_single_sample():
    with pytest.raises(ValueError):
        shapley_values(_g, np.zeros(3), np.zeros((0, 3)))
    with pytest.raises(ValueError):
        shapley_values(_g, np.zeros(3), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        shapley_values(_g, np.zeros(3), np.zeros((2, 3)), n_samples=0)
    _, se = shapley_values(_g, np.zeros(3), np.ones((2, 3)), n_samples=1)
    assert np.all(np.isinf(se))


def test_matrix_parallel_equals_serial_and_seeded():
    B = np.random.default_rng(0).normal(size=(10, 3))
    X = np.random.default_rng(1).normal(size=(6, 3))
    a = shapley_matrix(_g, X, B, n_samples=30, seed=5)
    b = shapley_matrix(_g, X, B, n_samples=30, seed=5, n_jobs=3)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (6, 3)
    # each row matches an independent call with its own spawned seed
    seq = np.random.SeedSequence(5).spawn(6)[2]
    np.testing.assert_array_equal(a[2], shapley_values(_g, X[2], B, 30, seq)[0])


def test_global_importance_ranks_used_feature_first():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 3))
    y = (X[:, 1] > 0.5).astype(int)
    rf = RandomForest(n_estimators=20, seed=0).fit(X, y)
    rep = global_importance(rf, X[:20], sample_background(X, 30), n_samples=40)
    assert rep.method == "shapley" and rep.ranking()[0] == "x1"


def test_sample_background():
    X = np.arange(20.0).reshape(10, 2)
    np.testing.assert_array_equal(sample_background(X, 50), X)
    b = sample_background(X, 4, seed=1)
    assert b.shape == (4, 2) and len({tuple(r) for r in b}) == 4


# ------------------------------------------------------------ permutation

def test_ignored_feature_has_exactly_zero_importance():
    X = np.random.default_rng(0).normal(size=(50, 3))
    predict = lambda Z: (Z[:, 0] > 0).astype(int)  # noqa: E731
    y = predict(X)
    rep = permutation_importance(predict, X, y, repeats=5)
    assert rep.scores[1] == 0.0 and rep.scores[2] == 0.0
    assert rep.scores[0] > 0.2
    assert rep.ranking()[0] == "x0"


def test_six_point_threshold_model():
    x0 = np.array([0.1, 0.2, 0.3, 0.4, 0.9, 1.0])
    X = np.c_[x0, np.zeros(6)]
    predict = lambda Z: (Z[:, 0] > 0.5).astype(int)  # noqa: E731
    y = predict(X)
    # expected accuracy after shuffling column 0, enumerated over all 720 orders
    accs = [np.mean(predict(np.c_[x0[list(p)], np.zeros(6)]) == y) for p in itertools.permutations(range(6))]
    expected_drop = 1.0 - np.mean(accs)
    assert expected_drop == pytest.approx(4 / 9)
    rep = permutation_importance(predict, X, y, repeats=4000, seed=0)
    assert rep.scores[0] == pytest.approx(expected_drop, abs=0.02)


def test_permutation_does_not_mutate_input_and_is_seeded():
    X = np.random.default_rng(0).normal(size=(40, 3))
    X0 = X.copy()
    predict = lambda Z: (Z[:, 0] + Z[:, 2] > 0).astype(int)  # noqa: E731
    y = predict(X)
    a = permutation_importance(predict, X, y, seed=3)
    np.testing.assert_array_equal(X, X0)
    assert a == permutation_importance(predict, X, y, seed=3)


def test_permutation_validation():
    with pytest.raises(ValueError):
        permutation_importance(lambda Z: Z[:, 0], np.zeros((1, 2)), [0])
    with pytest.raises(ValueError):
        permutation_importance(lambda Z: Z[:, 0], np.zeros((3, 2)), [0, 1, 0], repeats=0)


def test_report_outputs():
    rep = ImportanceReport("permutation", ["a", "b", "c"], [0.1, 0.3, 0.1], 10, 0)
    assert rep.ranking() == ["b", "a", "c"]
    assert rep.rank_of("c") == 2
    assert ImportanceReport.from_dict(json.loads(rep.to_json())) == rep
    assert rep.to_csv().splitlines() == ["feature,score", "a,0.1", "b,0.3", "c,0.1"]
    with pytest.raises(ValueError):
        ImportanceReport("lime", ["a"], [1.0], 1, 0)
    with pytest.raises(ValueError):
        ImportanceReport("shapley", ["a"], [1.0, 2.0], 1, 0)
