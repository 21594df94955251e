"""Compiled kernels versus the numpy fallback on the three hot paths.

    python3 benchmarks/bench_backends.py [--quick] [--json out.json]

Forest inference is timed at the deployed batch size (20) and on a bulk
batch; training covers one random forest fit and one one-class SVM solve.
"""
from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from oran_anomaly import _backend
from oran_anomaly.dataset import label_reports, split
from oran_anomaly.detectors import default_params
from oran_anomaly.features import extract_matrix
from oran_anomaly.forest import IsolationForest, RandomForest
from oran_anomaly.harness import bench_callable
from oran_anomaly.neural import OneClassSvm
from oran_anomaly.synthetic import generate_reports


def _timed(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3  # ms


def run(quick: bool) -> list[dict]:
    n_reports = 3000 if quick else 11_429
    lab = label_reports(generate_reports(n_ues=20, n_reports=n_reports, seed=0))
    train, test = split(lab)
    Xtr = extract_matrix([r.report for r in train]).values
    ytr = np.array([r.label for r in train])
    Xte = extract_matrix([r.report for r in test]).values
    n_trees = 50 if quick else 200

    with _backend.use_backend("cython"):
        iso = IsolationForest(**{**default_params("isolation_forest"), "n_estimators": n_trees}, seed=0).fit(Xtr, ytr)
        rf = RandomForest(**{**default_params("random_forest"), "n_estimators": n_trees}, seed=0).fit(Xtr, ytr)
    Z = np.random.default_rng(0).normal(size=(400 if quick else 1500, 8))
    iters = 50 if quick else 300

    rows = []
    for backend in _backend.available():
        with _backend.use_backend(backend):
            for name, model in (("isolation_forest", iso), ("random_forest", rf)):
                for batch in (20, len(Xte)):
                    xb = np.ascontiguousarray(Xte[:batch])
                    n_it = iters if batch == 20 else max(3, iters // 30)
                    s = bench_callable(model.predict, xb, iterations=max(n_it, 30), warmup=5)
                    rows.append({"backend": backend, "task": f"{name} predict", "batch": batch,
                                 "ms": s.mean_ms, "p99_ms": s.p99 / 1e3})
            fit_ms = _timed(lambda: RandomForest(n_estimators=max(5, n_trees // 10), seed=1).fit(Xtr, ytr), 2)
            rows.append({"backend": backend, "task": f"random_forest fit ({max(5, n_trees // 10)} trees)",
                         "batch": len(Xtr), "ms": fit_ms, "p99_ms": None})
            svm_ms = _timed(lambda: OneClassSvm(sigma=1.0, nu=0.1, tol=1e-4).fit(Z), 2)
            rows.append({"backend": backend, "task": "one-class SVM fit", "batch": len(Z), "ms": svm_ms,
                         "p99_ms": None})
    return rows


def print_table(rows: list[dict]):
    by = {}
    for r in rows:
        by.setdefault((r["task"], r["batch"]), {})[r["backend"]] = r["ms"]
    print(f"{'task':<34}{'rows':>7}{'python ms':>12}{'cython ms':>12}{'speedup':>9}")
    for (task, batch), v in by.items():
        py, cy = v.get("python"), v.get("cython")
        speed = f"{py / cy:8.1f}x" if py and cy else "      n/a"
        cy_s = f"{cy:12.3f}" if cy is not None else f"{'n/a':>12}"
        print(f"{task:<34}{batch:>7}{py:12.3f}{cy_s}{speed}")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true", help="smaller data and fewer trees")
    ap.add_argument("--json", help="write raw rows here")
    args = ap.parse_args(argv)
    if "cython" not in _backend.available():
        print("compiled kernels not built; only the fallback is timed", file=sys.stderr)
    rows = run(args.quick)
    print_table(rows)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
