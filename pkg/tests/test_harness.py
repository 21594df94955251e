import json
import math
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from factories import make_report, random_reports
from oran_anomaly.detectors import build_model
from oran_anomaly.features import extract_matrix
from oran_anomaly.harness import (MODEL_FORMAT_VERSION, LatencyStats, ModelFormatError, ReplayConfig,
                                  bench_callable, bench_inference, load_model, make_batches, model_from_document,
                                  model_to_document, nearest_rank, replay, save_model)
from oran_anomaly.pipeline import detect_serving

SMALL = {
    "isolation_forest": {"n_estimators": 20, "max_samples": 0.1},
    "random_forest": {"n_estimators": 10},
    "autoencoder": {"hidden": [8, 4, 8], "epochs": 3},
    "ae1svm": {"hidden": [8, 4, 8], "epochs": 3},
}


@pytest.fixture(scope="module")
def data():
    labeled = random_reports(300, seed=11)
    X = extract_matrix([r.report for r in labeled])
    y = np.array([r.label for r in labeled])
    return labeled, X, y


@pytest.fixture(scope="module")
def models(data):
    _, X, y = data
    return {k: build_model(k, **p).fit(X, y) for k, p in SMALL.items()}


# ------------------------------------------------------------ latency

@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=200), st.floats(0.1, 100))
def test_nearest_rank_oracle(xs, p):
    s = np.sort(np.array(xs))
    v = nearest_rank(s, p)
    # smallest sample with at least p% of the data at or below it
    expect = next(x for x in s if np.mean(s <= x) * 100 >= p - 1e-9)
    assert v == expect


def test_nearest_rank_examples():
    s = np.arange(1.0, 101.0)
    assert nearest_rank(s, 50) == 50 and nearest_rank(s, 95) == 95 and nearest_rank(s, 99) == 99
    assert nearest_rank(np.array([7.0]), 1) == 7.0


def test_stats_ordering():
    st_ = LatencyStats.from_samples("m", 20, np.random.default_rng(0).exponential(size=500))
    assert st_.p50 <= st_.p95 <= st_.p99 <= st_.max
    assert st_.iterations == 500
    d = st_.to_dict(verbose=True)
    assert len(d["samples_us"]) == 500 and "samples_us" not in st_.to_dict()
    with pytest.raises(ValueError):
        LatencyStats.from_samples("m", 1, [])


def test_bench_rejects_too_few_iterations():
    with pytest.raises(ValueError):
        bench_callable(len, [1], iterations=29)
    with pytest.raises(ValueError):
        bench_callable(len, [1], iterations=30, warmup=-1)


def test_bench_output_equals_offline(models, data):
    _, X, _ = data
    for model in models.values():
        batch = X.values[:20]
        stats = bench_inference(model, batch, iterations=30, warmup=2)
        np.testing.assert_array_equal(stats.output, model.predict(batch))
        assert stats.batch_size == 20 and stats.model == model.kind


def test_doubling_batch_at_most_2_5x(models, data):
    _, X, _ = data
    for model in models.values():
        a = bench_inference(model, X.values[:20], iterations=200, warmup=20)
        b = bench_inference(model, X.values[:40], iterations=200, warmup=20)
        assert b.p50 <= 2.5 * a.p50, model.kind


def test_bench_callable_counts_calls():
    calls = []
    bench_callable(lambda b: calls.append(1), [0], iterations=30, warmup=5)
    assert len(calls) == 35


# ------------------------------------------------------------ replay

def test_batches_per_timestamp_and_fixed():
    reps = [make_report(ts=t, ue=f"U{i}") for i, t in enumerate([5, 0, 5, 0, 9])]
    per = make_batches(reps, ReplayConfig())
    assert [[r.ue_id for r in b] for b in per] == [["U1", "U3"], ["U0", "U2"], ["U4"]]
    fixed = make_batches(reps, ReplayConfig(grouping="fixed-size", batch_size=2))
    assert [len(b) for b in fixed] == [2, 2, 1]


def test_replay_config_validation():
    for bad in (dict(speed=0), dict(grouping="random"), dict(batch_size=0), dict(queue_size=0)):
        with pytest.raises(ValueError):
            ReplayConfig(**bad)


def test_two_timestamps_two_hook_calls():
    calls = []
    reps = [make_report(ts=0), make_report(ts=0, ue="B"), make_report(ts=1000)]
    s = replay(reps, ReplayConfig(), lambda b: calls.append(len(b)) or [])
    assert calls == [2, 1] and s.n_batches == 2 and s.n_reports == 3


def _key(alerts):
    return [(a.ue_id, a.timestamp, a.score, a.label) for a in alerts]


def test_online_alerts_equal_offline(models, data):
    labeled, _, _ = data
    model = models["random_forest"]
    offline_order = sorted(labeled, key=lambda r: r.report.timestamp)
    offline = detect_serving(model, offline_order)
    hook = lambda b: detect_serving(model, b)  # noqa: E731
    fast = replay(labeled, ReplayConfig(), hook)
    assert _key(fast.results) == _key(offline)
    paced = replay(labeled[:40], ReplayConfig(speed=1e6, queue_size=1), hook)
    assert _key(paced.results) == _key(detect_serving(model, sorted(labeled[:40], key=lambda r: r.report.timestamp)))
    fixed = replay(labeled, ReplayConfig(grouping="fixed-size", batch_size=7), hook)
    assert _key(fixed.results) == _key(offline)
    assert fast.to_dict()["n_alerts"] == len(offline)


def test_pacing_follows_report_time():
    reps = [make_report(ts=0), make_report(ts=1000)]
    t0 = time.monotonic()
    replay(reps, ReplayConfig(speed=10.0), lambda b: [])
    assert time.monotonic() - t0 >= 0.09


def test_hook_and_sink_errors_recorded():
    reps = [make_report(ts=t) for t in range(4)]

    def hook(b):
        if b[0].timestamp == 1:
            raise RuntimeError("boom")
        return [b[0].timestamp]

    def sink(out):
        if out == [2]:
            raise IOError("disk full")

    s = replay(reps, ReplayConfig(), hook, sink)
    assert s.n_batches == 4 and s.results == [0, 2, 3]
    assert [(e["batch"], e["stage"]) for e in s.errors] == [(1, "hook"), (2, "sink")]
    assert "boom" in s.errors[0]["error"]


def test_slow_hook_with_bounded_queue_completes():
    reps = [make_report(ts=t) for t in range(10)]

    def hook(b):
        time.sleep(0.005)
        return []

    s = replay(reps, ReplayConfig(queue_size=1), hook, keep_results=False)
    assert s.n_batches == 10 and s.results == []


def test_empty_replay():
    s = replay([], ReplayConfig(), lambda b: [])
    assert s.n_batches == 0 and "batch_latency_us" not in s.to_dict()


# ------------------------------------------------------------ persistence

@pytest.mark.parametrize("kind", list(SMALL))
def test_save_load_bit_exact(kind, models, data, tmp_path):
    _, X, _ = data
    model = models[kind]
    path = tmp_path / f"{kind}.json"
    save_model(model, path)
    back = load_model(path, kind=kind)
    batch = X.values[:100]
    np.testing.assert_array_equal(back.anomaly_score(batch), model.anomaly_score(batch))
    np.testing.assert_array_equal(back.predict(batch), model.predict(batch))
    assert back.schema_ == model.schema_


def test_truncated_file(models, tmp_path):
    path = tmp_path / "m.json"
    save_model(models["random_forest"], path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(ModelFormatError, match="truncated"):
        load_model(path)
    path.write_bytes(b"\xff\xfe\x00")
    with pytest.raises(ModelFormatError):
        load_model(path)


def test_version_kind_and_checksum_guards(models):
    doc = model_to_document(models["isolation_forest"])
    with pytest.raises(ModelFormatError, match="version"):
        model_from_document({**doc, "version": MODEL_FORMAT_VERSION + 1})
    with pytest.raises(ModelFormatError, match="expected random_forest"):
        model_from_document(doc, kind="random_forest")
    with pytest.raises(ModelFormatError, match="unknown model kind"):
        model_from_document({**doc, "kind": "svm"})
    bad = json.loads(json.dumps(doc))
    bad["payload"]["threshold"] = bad["payload"]["threshold"] + 1.0
    with pytest.raises(ModelFormatError, match="checksum"):
        model_from_document(bad)
    with pytest.raises(ModelFormatError, match="not a model"):
        model_from_document({"format": "pickle"})
    assert doc["checksum"].startswith("sha256:")


def test_malformed_payload_with_valid_checksum(models):
    import hashlib
    doc = model_to_document(models["random_forest"])
    payload = {"params": {}}
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()).hexdigest()
    with pytest.raises(ModelFormatError, match="malformed"):
        model_from_document({**doc, "payload": payload, "checksum": f"sha256:{digest}"})


def test_ms_conversion():
    s = LatencyStats.from_samples("m", 1, [1500.0] * 30)
    assert math.isclose(s.mean_ms, 1.5)
