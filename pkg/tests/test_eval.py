import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oran_anomaly.config import DEFAULT_CONFIG
from oran_anomaly.detectors import TABLE1_PARAMS
from oran_anomaly.eval import (ConfusionMatrix, EvalReport, evaluate, expand_grid, format_table, grid_search,
                               metrics, reports_to_json, score_labels, stratified_folds)
from oran_anomaly.forest import RandomForest


def _frac(a, b):
    return Fraction(a, b) if b else Fraction(0)


def _oracle(t, p):
    """Metrics recomputed from label arrays with exact rationals."""
    t, p = list(t), list(p)
    out = {}
    for c in (0, 1):
        tp = sum(1 for a, b in zip(t, p) if a == c and b == c)
        pred = sum(1 for b in p if b == c)
        act = sum(1 for a in t if a == c)
        prec, rec = _frac(tp, pred), _frac(tp, act)
        out[c] = (prec, rec, 2 * prec * rec / (prec + rec) if prec + rec else Fraction(0))
    acc = _frac(sum(a == b for a, b in zip(t, p)), len(t))
    return out, acc


def test_metrics_over_1000_random_confusion_matrices():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        t = rng.integers(0, 2, n)
        p = rng.integers(0, 2, n) if rng.random() < 0.8 else np.full(n, int(rng.integers(0, 2)))
        r = score_labels(t, p)
        per, acc = _oracle(t, p)
        assert r.precision_pos == pytest.approx(float(per[1][0]), abs=1e-12)
        assert r.recall_pos == pytest.approx(float(per[1][1]), abs=1e-12)
        assert r.precision_neg == pytest.approx(float(per[0][0]), abs=1e-12)
        assert r.recall_neg == pytest.approx(float(per[0][1]), abs=1e-12)
        assert r.f1_pos == pytest.approx(float(per[1][2]), abs=1e-12)
        assert r.f1_macro == pytest.approx(float((per[0][2] + per[1][2]) / 2), abs=1e-12)
        assert r.accuracy == pytest.approx(float(acc), abs=1e-12)
        cm = r.confusion
        assert cm.total == n
        # F1 identity in counts, when defined
        if 2 * cm.tp + cm.fp + cm.fn:
            assert r.f1_pos == pytest.approx(2 * cm.tp / (2 * cm.tp + cm.fp + cm.fn), abs=1e-12)


counts = st.integers(0, 10**6)


@settings(max_examples=300)
@given(counts, counts, counts, counts)
def test_metric_ranges_and_label_swap(tp, fp, fn, tn):
    if tp + fp + fn + tn == 0:
        return
    a = metrics(ConfusionMatrix(tp, fp, fn, tn))
    b = metrics(ConfusionMatrix(tn, fn, fp, tp))  # classes swapped
    for v in (a.precision_pos, a.recall_pos, a.precision_neg, a.recall_neg, a.f1_macro, a.accuracy):
        assert 0.0 <= v <= 1.0
    assert b.precision_pos == a.precision_neg and b.recall_pos == a.recall_neg
    assert b.f1_macro == pytest.approx(a.f1_macro, abs=1e-15)
    assert b.accuracy == a.accuracy
    assert min(a.precision_pos, a.recall_pos) - 1e-12 <= a.f1_pos <= max(a.precision_pos, a.recall_pos) + 1e-12


def test_worked_example():
    r = metrics(ConfusionMatrix(tp=86, fp=14, fn=14, tn=886))
    assert r.precision_pos == pytest.approx(0.86) and r.recall_pos == pytest.approx(0.86)
    assert r.f1_pos == pytest.approx(0.86)
    assert r.accuracy == pytest.approx(0.972)


def test_degenerate_cases():
    none_pred = score_labels([1, 1, 0], [0, 0, 0])
    assert none_pred.precision_pos == 0.0 and none_pred.recall_pos == 0.0 and none_pred.f1_pos == 0.0
    all_neg = score_labels([0, 0], [0, 0])
    assert all_neg.recall_pos == 0.0 and all_neg.accuracy == 1.0
    assert metrics(ConfusionMatrix(0, 0, 0, 0)).accuracy == 0.0


def test_constant_predictor_on_imbalanced_set():
    y = np.array([1] * 13 + [0] * 87)
    r = score_labels(y, np.zeros(100, dtype=int))
    assert r.accuracy == pytest.approx(0.87)
    assert r.recall_pos == 0.0
    assert r.f1_macro == pytest.approx(0.5 * (2 * 0.87 / 1.87))


def test_validation():
    with pytest.raises(ValueError):
        score_labels([0, 1], [0])
    with pytest.raises(ValueError):
        score_labels([0, 2], [0, 1])
    with pytest.raises(ValueError):
        metrics(ConfusionMatrix(-1, 0, 0, 1))


def test_report_round_trip_and_table():
    r = score_labels([1, 0, 1, 0], [1, 0, 0, 0], model="Random Forest")
    assert EvalReport.from_dict(json.loads(json.dumps(r.to_dict()))) == r
    assert json.loads(reports_to_json([r]))[0]["model"] == "Random Forest"
    table = format_table([r])
    assert "Precision(1)" in table and "Random Forest" in table and "75%" in table


def test_evaluate_uses_display_name():
    X = np.random.default_rng(0).normal(size=(60, 2))
    y = (X[:, 0] > 0).astype(int)
    r = evaluate(RandomForest(n_estimators=5).fit(X, y), X, y)
    assert r.model == "Random Forest" and r.accuracy > 0.9


# ------------------------------------------------------------ grid search

def test_expand_grid_canonical_order():
    g = expand_grid({"b": [2, 1], "a": ["x"]})
    assert g == [{"a": "x", "b": 1}, {"a": "x", "b": 2}]
    assert expand_grid({}) == [{}]
    with pytest.raises(ValueError):
        expand_grid({"a": []})


def test_default_grids_contain_published_values():
    for kind, params in TABLE1_PARAMS.items():
        grid = DEFAULT_CONFIG["grid"][kind]
        for k, values in grid.items():
            assert params[k] in values, (kind, k)


def test_stratified_folds_partition():
    y = np.array([0] * 20 + [1] * 7)
    folds = stratified_folds(y, 3, seed=1)
    allidx = np.sort(np.concatenate(folds))
    np.testing.assert_array_equal(allidx, np.arange(27))
    assert [int(y[f].sum()) for f in folds] in ([3, 2, 2], [2, 3, 2], [2, 2, 3])


def _toy(seed=0, n=120):
    X = np.random.default_rng(seed).normal(size=(n, 3))
    return X, (X[:, 0] + X[:, 1] > 1).astype(np.int64)


def test_singleton_grid_returns_its_config():
    X, y = _toy()
    res = grid_search("random_forest", {"n_estimators": [5]}, X, y)
    assert res.best_params == {"n_estimators": 5}
    assert len(res.trials) == 1 and res.trials[0].score == res.best_score


def test_inert_parameter_tie_goes_to_first_canonical():
    X, y = _toy()
    res = grid_search("random_forest", {"n_jobs": [2, 1], "n_estimators": [5]}, X, y)
    assert res.trials[0].score == res.trials[1].score
    assert res.best_params == {"n_estimators": 5, "n_jobs": 1}


def test_failures_recorded_and_all_fail_raises():
    X, y = _toy()
    res = grid_search("random_forest", {"n_estimators": [0, 5]}, X, y)
    bad = [t for t in res.trials if t.error]
    assert len(bad) == 1 and bad[0].params == {"n_estimators": 0} and bad[0].score is None
    assert res.best_params == {"n_estimators": 5}
    with pytest.raises(RuntimeError):
        grid_search("random_forest", {"n_estimators": [0, -1]}, X, y)
    with pytest.raises(ValueError):
        grid_search("random_forest", {}, X, y)


def test_parallel_grid_equals_serial():
    X, y = _toy()
    grid = {"n_estimators": [3, 6], "min_samples_leaf": [1, 3]}
    a = grid_search("random_forest", grid, X, y, n_jobs=1)
    b = grid_search("random_forest", grid, X, y, n_jobs=4)
    assert a.to_dict() == b.to_dict()


def test_unsupervised_grid_scores_on_training_rows():
    X, y = _toy()
    res = grid_search("isolation_forest", {"max_samples": [0.2, 0.5]}, X, y, fixed={"n_estimators": 10})
    assert res.best_params["max_samples"] in (0.2, 0.5)
    assert "n_estimators" not in res.best_params
