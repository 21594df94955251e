import json
from pathlib import Path

import pytest

from oran_anomaly.cli import main
from oran_anomaly.config import DEFAULT_CONFIG, ConfigError, load_config

SMALL = ["--set", "models.random_forest.n_estimators=10",
         "--set", "models.isolation_forest.n_estimators=20",
         "--set", "models.autoencoder.epochs=2",
         "--set", "models.ae1svm.epochs=2"]


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["ingest", "--synthetic", "1200", "--n-ues", "12", "--seed", "3", "--out", str(d / "raw.csv")]) == 0
    assert main(["label", "--input", str(d / "raw.csv"), "--out", str(d / "labeled.csv")]) == 0
    assert main(["split", "--input", str(d / "labeled.csv"), "--out-dir", str(d)]) == 0
    for kind in ("random_forest", "isolation_forest", "autoencoder", "ae1svm"):
        assert main(["train", "--train", str(d / "train.csv"), "--kind", kind,
                     "--model", str(d / f"{kind}.json"), *SMALL]) == 0
    assert main(["train", "--train", str(d / "train.csv"), "--neighbor", "--model", str(d / "nb.json"),
                 *SMALL]) == 0
    return d


def test_example_config_matches_defaults():
    path = Path(__file__).resolve().parents[1] / "configs" / "example.json"
    assert json.loads(path.read_text()) == DEFAULT_CONFIG
    assert load_config(path) == DEFAULT_CONFIG


def test_config_overrides_and_strictness(tmp_path):
    cfg = load_config(overrides=["split.seed=7", "replay.grouping=fixed-size", "models.ae1svm.nu=0.2"])
    assert cfg["split"]["seed"] == 7 and cfg["replay"]["grouping"] == "fixed-size"
    assert cfg["models"]["ae1svm"]["nu"] == 0.2
    # a grid override replaces that kind's default grid
    assert load_config(overrides=['grid.ae1svm={"nu": [0.1]}'])["grid"]["ae1svm"] == {"nu": [0.1]}
    with pytest.raises(ConfigError):
        load_config(overrides=["split.sed=7"])
    with pytest.raises(ConfigError):
        load_config(overrides=["nonsense"])
    bad = tmp_path / "c.json"
    bad.write_text("[1]")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_ingest_label_split_summaries(workdir, capsys):
    code, out, _ = _run(capsys, "split", "--input", workdir / "labeled.csv", "--out-dir", workdir / "again")
    s = json.loads(out)
    assert code == 0 and s["train"] + s["test"] == 1200
    assert abs(s["train_anomaly_rate"] - s["test_anomaly_rate"]) < 0.01
    assert (workdir / "train.csv").exists() and (workdir / "test.csv").exists()


def test_evaluate_json_and_table(workdir, capsys):
    models = [a for k in ("random_forest", "isolation_forest", "autoencoder", "ae1svm")
              for a in ("--model", workdir / f"{k}.json")]
    code, out, _ = _run(capsys, "evaluate", "--test", workdir / "test.csv", *models)
    reports = json.loads(out)
    assert code == 0 and [r["model"] for r in reports] == ["Random Forest", "Isolation Forest", "AutoEncoder",
                                                           "AE-1SVM"]
    code, out, _ = _run(capsys, "evaluate", "--test", workdir / "test.csv", "--table", *models)
    assert "Accuracy" in out.splitlines()[0] and len(out.splitlines()) == 6


def test_grid_search(workdir, capsys):
    code, out, _ = _run(capsys, "grid-search", "--train", workdir / "train.csv", "--kind", "random_forest",
                        "--set", 'grid.random_forest={"n_estimators": [5, 10]}', "--set", "grid.n_folds=2")
    res = json.loads(out)
    assert code == 0 and res["best_params"]["n_estimators"] in (5, 10) and len(res["trials"]) == 2


@pytest.mark.parametrize("method", ["permutation", "shapley"])
def test_explain(workdir, capsys, method):
    csv = workdir / f"{method}.csv"
    code, out, _ = _run(capsys, "explain", "--model", workdir / "random_forest.json", "--train",
                        workdir / "train.csv", "--test", workdir / "test.csv", "--method", method, "--csv", csv,
                        "--set", "explain.n_points=10", "--set", "explain.n_samples=10",
                        "--set", "explain.repeats=2")
    rep = json.loads(out)
    assert code == 0 and rep["method"] == method and len(rep["features"]) == 19
    assert csv.read_text().startswith("feature,score\nprb_used_dl,")


def test_detect_writes_jsonl(workdir, capsys):
    out_path = workdir / "alerts.jsonl"
    code, out, _ = _run(capsys, "detect", "--model", workdir / "random_forest.json", "--input",
                        workdir / "test.csv", "--out", out_path)
    lines = out_path.read_text().splitlines()
    assert code == 0 and out == ""
    assert lines and all(json.loads(line)["label"] == 1 for line in lines)


def test_filter_neighbors(workdir, capsys):
    code, out, _ = _run(capsys, "filter-neighbors", "--model", workdir / "nb.json", "--input",
                        workdir / "test.csv", "--out", workdir / "v.jsonl", "--ecdf", workdir / "ecdf.csv")
    s = json.loads(out)
    assert code == 0 and 0.0 <= s["fraction"] <= 1.0
    assert s["mean_viable"] == pytest.approx(5 * (1 - s["fraction"]))
    assert len((workdir / "v.jsonl").read_text().splitlines()) == s["n_reports"]
    assert (workdir / "ecdf.csv").read_text().startswith("group,value,cumulative_fraction")


def test_bench(workdir, capsys):
    code, out, _ = _run(capsys, "bench", "--model", workdir / "random_forest.json", "--model",
                        workdir / "nb.json", "--input", workdir / "test.csv",
                        "--set", "bench.iterations=30", "--set", "bench.warmup=1")
    rows = json.loads(out)
    assert code == 0 and [r["model"] for r in rows] == ["random_forest", "random_forest/neighbors"]
    assert all(r["batch_size"] == 20 and r["p50_us"] <= r["p99_us"] for r in rows)


def test_replay_matches_detect(workdir, capsys):
    alerts = workdir / "replayed.jsonl"
    code, out, _ = _run(capsys, "replay", "--model", workdir / "random_forest.json", "--input",
                        workdir / "test.csv", "--out", alerts)
    s = json.loads(out)
    assert code == 0 and s["errors"] == []
    _run(capsys, "detect", "--model", workdir / "random_forest.json", "--input", workdir / "test.csv",
         "--out", workdir / "offline.jsonl")

    def keys(p):
        rows = [json.loads(x) for x in p.read_text().splitlines()]
        return sorted((r["ue_id"], r["timestamp"], r["score"]) for r in rows)

    assert keys(alerts) == keys(workdir / "offline.jsonl")
    assert s["n_alerts"] == len(keys(alerts))


def test_errors_reported_as_json(workdir, capsys):
    code, _, err = _run(capsys, "evaluate", "--test", workdir / "test.csv", "--model", workdir / "missing.json")
    assert code == 1 and json.loads(err)["error"] in ("FileNotFoundError", "OSError")
    code, _, err = _run(capsys, "train", "--train", workdir / "train.csv", "--model", workdir / "x.json")
    assert code == 1 and "--kind" in json.loads(err)["message"]
    code, _, err = _run(capsys, "label", "--input", workdir / "raw.csv", "--set", "split.nope=1",
                        "--out", workdir / "l.csv")
    assert code == 1 and json.loads(err)["error"] == "ConfigError"
    code, _, err = _run(capsys, "ingest", "--out", workdir / "x.csv")
    assert code == 1
    # wrong model kind for the verb surfaces as a schema error
    code, _, err = _run(capsys, "detect", "--model", workdir / "nb.json", "--input", workdir / "test.csv")
    assert code == 1 and json.loads(err)["error"] == "SchemaError"
