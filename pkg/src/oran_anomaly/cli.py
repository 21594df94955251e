"""Command line entry point: ``oran-ad <verb> [options]``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from .config import ConfigError, load_config
from .detectors import MODEL_KINDS, build_model
from .eval import evaluate, format_table, grid_search
from .explain import global_importance, permutation_importance, sample_background
from .features import PER_NEIGHBOR, SERVING_PLUS_NEIGHBORS, extract_matrix
from .harness import ModelFormatError, ReplayConfig, bench_callable, bench_inference, load_model, replay, save_model
from .pipeline import (AlertDebouncer, detect_serving, filter_neighbors_batch, neighbor_summary,
                       prb_contention_filter, radio_groups, train_neighbor_model, write_ecdf_csv, write_jsonl)

log = logging.getLogger("oran_anomaly")


class CliError(Exception):
    pass


# ------------------------------------------------------------ data helpers

def _mapping(cfg) -> ds.ColumnMapping:
    path = cfg["dataset"]["mapping"]
    return ds.ColumnMapping.from_json(path) if path else ds.DEFAULT_MAPPING


def _read_reports(path, cfg) -> list[ds.KpiReport]:
    stats = ds.LoadStats()
    reports = ds.load_dataset(path, _mapping(cfg), stats)
    log.info("loaded %d of %d rows from %s", stats.loaded, stats.rows, path)
    return reports


def _read_labeled(path, cfg) -> list[ds.LabeledReport]:
    """Labels from the file's label column if present, else from the labeling rule."""
    col = cfg["dataset"]["label_column"]
    reports = _read_reports(path, cfg)
    if reports and any(k == col for k, _ in reports[0].extras):
        out = []
        for r in reports:
            extras = dict(r.extras)
            label = int(extras.pop(col))
            out.append(ds.LabeledReport(dataclasses.replace(r, extras=tuple(extras.items())), label))
        return out
    d = cfg["dataset"]
    return ds.label_reports(reports, d["throughput_ratio"], d["use_source_label"])


def _xy(labeled):
    X = extract_matrix([r.report for r in labeled], SERVING_PLUS_NEIGHBORS)
    return X, np.array([r.label for r in labeled], dtype=np.int64)


def _model_params(cfg, kind: str) -> dict:
    params = dict(cfg["models"][kind])
    params.setdefault("seed", cfg["models"]["seed"])
    return params


def _emit(obj, out: str | None):
    text = obj if isinstance(obj, str) else json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")


# ------------------------------------------------------------ verbs

def cmd_ingest(args, cfg):
    if args.synthetic:
        from .synthetic import generate_reports
        reports = generate_reports(n_ues=args.n_ues, n_reports=args.synthetic, seed=args.seed)
        source = "synthetic"
    else:
        if not args.input:
            raise CliError("ingest needs --input or --synthetic")
        reports = _read_reports(args.input, cfg)
        source = args.input
    if not args.out:
        raise CliError("ingest needs --out")
    ds.save_dataset(reports, args.out, _mapping(cfg))
    return {"source": source, "reports": len(reports), "out": args.out}


def cmd_label(args, cfg):
    if not args.out:
        raise CliError("label needs --out")
    d = cfg["dataset"]
    labeled = ds.label_reports(_read_reports(args.input, cfg), d["throughput_ratio"], d["use_source_label"])
    ds.save_dataset(labeled, args.out, _mapping(cfg), d["label_column"])
    return {"reports": len(labeled), "anomaly_rate": ds.anomaly_rate(labeled), "out": args.out}


def cmd_split(args, cfg):
    s = cfg["split"]
    train, test = ds.split(_read_labeled(args.input, cfg), ds.SplitSpec(s["test_fraction"], s["seed"], s["stratified"]))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    col = cfg["dataset"]["label_column"]
    ds.save_dataset(train, out_dir / "train.csv", _mapping(cfg), col)
    ds.save_dataset(test, out_dir / "test.csv", _mapping(cfg), col)
    return {"train": len(train), "test": len(test),
            "train_anomaly_rate": ds.anomaly_rate(train), "test_anomaly_rate": ds.anomaly_rate(test)}


def cmd_train(args, cfg):
    labeled = _read_labeled(args.train, cfg)
    if args.neighbor:
        kind = args.kind or cfg["pipeline"]["neighbor_kind"]
        filtered = prb_contention_filter(labeled, cfg["pipeline"]["prb_cutoff"])
        model = train_neighbor_model(filtered.kept, kind, _model_params(cfg, kind))
        info = {"kind": kind, "schema": PER_NEIGHBOR.id, "reports": len(filtered.kept),
                "removed_by_contention": filtered.removed}
    else:
        kind = args.kind
        if kind is None:
            raise CliError("train needs --kind")
        X, y = _xy(labeled)
        model = build_model(kind, **_model_params(cfg, kind)).fit(X, y, schema=SERVING_PLUS_NEIGHBORS)
        info = {"kind": kind, "schema": SERVING_PLUS_NEIGHBORS.id, "reports": len(labeled)}
    save_model(model, args.model)
    info["model"] = args.model
    return info


def cmd_evaluate(args, cfg):
    X, y = _xy(_read_labeled(args.test, cfg))
    reports = [evaluate(load_model(p), X, y) for p in args.model]
    if args.table:
        return format_table(reports)
    return [r.to_dict() for r in reports]


def cmd_grid_search(args, cfg):
    X, y = _xy(_read_labeled(args.train, cfg))
    kind = args.kind
    fixed = _model_params(cfg, kind)
    grid = cfg["grid"][kind]
    for k in grid:
        fixed.pop(k, None)
    result = grid_search(kind, grid, X, y, seed=cfg["models"]["seed"], n_folds=cfg["grid"]["n_folds"], fixed=fixed)
    return result.to_dict()


def cmd_explain(args, cfg):
    e = cfg["explain"]
    model = load_model(args.model)
    X_tr, _ = _xy(_read_labeled(args.train, cfg))
    X_te, y_te = _xy(_read_labeled(args.test, cfg))
    if args.method == "permutation":
        rep = permutation_importance(model, X_te, y_te, e["repeats"], e["seed"])
    else:
        bg = sample_background(X_tr, e["background_size"], e["seed"])
        pts = sample_background(X_te, e["n_points"], e["seed"] + 1)
        rep = global_importance(model, pts, bg, e["n_samples"], e["seed"], list(SERVING_PLUS_NEIGHBORS.names))
    if args.csv:
        Path(args.csv).write_text(rep.to_csv())
    return rep.to_dict()


def _write_stream(items, out):
    if out:
        with open(out, "w") as fh:
            return write_jsonl(items, fh)
    return write_jsonl(items, sys.stdout)


def cmd_detect(args, cfg):
    p = cfg["pipeline"]
    model = load_model(args.model)
    deb = AlertDebouncer(p["debounce_k"], p["debounce_window_ms"])
    alerts = deb.filter(detect_serving(model, _read_reports(args.input, cfg)))
    n = _write_stream(alerts, args.out)
    log.info("%d alerts", n)
    return None


def cmd_filter_neighbors(args, cfg):
    model = load_model(args.model)
    reports = _read_reports(args.input, cfg)
    if args.out:
        _write_stream(filter_neighbors_batch(model, reports), args.out)
    if args.ecdf:
        write_ecdf_csv(radio_groups(_read_labeled(args.input, cfg), args.ecdf_metric), args.ecdf)
    return neighbor_summary(model, reports).to_dict()


def cmd_bench(args, cfg):
    b = cfg["bench"]
    reports = _read_reports(args.input, cfg)[: b["batch_size"]]
    out = []
    for path in args.model:
        model = load_model(path)
        if model.schema_.id == PER_NEIGHBOR.id:
            stats = bench_callable(lambda r: filter_neighbors_batch(model, r), reports, b["iterations"],
                                   b["warmup"], label=f"{model.kind}/neighbors")
        else:
            stats = bench_inference(model, extract_matrix(reports, model.schema_), b["iterations"], b["warmup"])
        out.append(stats.to_dict(verbose=args.verbose))
    return out


def cmd_replay(args, cfg):
    r = cfg["replay"]
    speed = math.inf if r["speed"] is None else float(r["speed"])
    model = load_model(args.model)
    rc = ReplayConfig(speed, r["grouping"], r["batch_size"], r["queue_size"])
    fh = open(args.out, "w") if args.out else None
    try:
        sink = (lambda alerts: write_jsonl(alerts, fh)) if fh else None
        summary = replay(_read_reports(args.input, cfg), rc, lambda b: detect_serving(model, b), sink,
                         keep_results=False)
    finally:
        if fh:
            fh.close()
    return summary.to_dict()


# ------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oran-ad", description="KPI anomaly detection for RAN telemetry")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True)

    def verb(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="config override, value parsed as JSON when possible")
        p.add_argument("--out", help="output path (default stdout)")
        p.set_defaults(fn=fn)
        return p

    p = verb("ingest", cmd_ingest, "normalise a KPI CSV, or generate a synthetic one")
    p.add_argument("--input")
    p.add_argument("--synthetic", type=int, metavar="N", help="generate N synthetic reports instead")
    p.add_argument("--n-ues", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)

    p = verb("label", cmd_label, "apply the throughput labeling rule")
    p.add_argument("--input", required=True)

    p = verb("split", cmd_split, "seeded train/test split")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)

    p = verb("train", cmd_train, "train one detector and save it")
    p.add_argument("--train", required=True)
    p.add_argument("--kind", choices=sorted(MODEL_KINDS))
    p.add_argument("--model", required=True, help="model file to write")
    p.add_argument("--neighbor", action="store_true", help="train the per-neighbor coverage model")

    p = verb("evaluate", cmd_evaluate, "score saved models on a labelled test set")
    p.add_argument("--test", required=True)
    p.add_argument("--model", required=True, action="append")
    p.add_argument("--table", action="store_true", help="plain-text table instead of JSON")

    p = verb("grid-search", cmd_grid_search, "hyperparameter search on training data")
    p.add_argument("--train", required=True)
    p.add_argument("--kind", required=True, choices=sorted(MODEL_KINDS))

    p = verb("explain", cmd_explain, "permutation importance or mean |Shapley|")
    p.add_argument("--model", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--method", choices=["permutation", "shapley"], default="permutation")
    p.add_argument("--csv", help="also write (feature, score) CSV")

    p = verb("detect", cmd_detect, "serving-cell alerts as JSON lines")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)

    p = verb("filter-neighbors", cmd_filter_neighbors, "neighbor verdicts and flagged fraction")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--ecdf", help="write radio-metric ECDF CSV here")
    p.add_argument("--ecdf-metric", choices=["rsrp", "rssinr", "rsrq"], default="rssinr")

    p = verb("bench", cmd_bench, "inference latency at a fixed batch size")
    p.add_argument("--model", required=True, action="append")
    p.add_argument("--input", required=True)
    p.add_argument("--verbose-samples", dest="verbose", action="store_true", help="include raw samples")

    p = verb("replay", cmd_replay, "stream a dataset through the serving-cell detector")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    return parser


_DATA_OUT_VERBS = {"ingest", "label", "split", "train", "detect", "filter-neighbors", "replay"}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        result = args.fn(args, cfg)
        if result is not None:
            # where --out names a data file, the summary goes to stdout
            _emit(result, None if args.verb in _DATA_OUT_VERBS else args.out)
    except (CliError, ConfigError, ds.DatasetError, ModelFormatError, ValueError, OSError, KeyError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
