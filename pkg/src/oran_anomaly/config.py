"""Run configuration: one JSON document with a section per stage."""
from __future__ import annotations

import copy
import json
from pathlib import Path

from .detectors import TABLE1_PARAMS


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG: dict = {
    "dataset": {
        "mapping": None,            # path to a column-mapping JSON; null uses the built-in one
        "throughput_ratio": 0.70,
        "use_source_label": False,
        "label_column": "label",
    },
    "split": {"test_fraction": 0.3, "seed": 42, "stratified": True},
    "models": {
        "seed": 0,
        "kinds": ["isolation_forest", "random_forest", "autoencoder", "ae1svm"],
        "isolation_forest": {**TABLE1_PARAMS["isolation_forest"], "contamination": "train_rate"},
        "random_forest": {**TABLE1_PARAMS["random_forest"], "max_features": "sqrt", "bootstrap": True},
        "autoencoder": {**TABLE1_PARAMS["autoencoder"], "learning_rate": 1e-3, "optimizer": "sgd",
                        "contamination": "train_rate"},
        "ae1svm": {**TABLE1_PARAMS["ae1svm"], "learning_rate": 1e-3, "optimizer": "sgd", "svm_tol": 1e-4},
    },
    "grid": {
        "n_folds": 3,
        "isolation_forest": {"n_estimators": [100, 200], "max_samples": [0.005, 0.01, 0.05]},
        "random_forest": {"n_estimators": [100, 200], "min_samples_leaf": [1, 2], "min_samples_split": [2, 4]},
        "autoencoder": {"dropout_rate": [0.05, 0.2], "batch_size": [16, 32]},
        "ae1svm": {"dropout_rate": [0.1, 0.3], "nu": [0.05, 0.1]},
    },
    "explain": {"background_size": 100, "n_samples": 100, "n_points": 200, "repeats": 10, "seed": 0},
    "pipeline": {
        "prb_cutoff": 0.70,
        "neighbor_kind": "random_forest",
        "debounce_k": 1,
        "debounce_window_ms": 0,
    },
    "bench": {"batch_size": 20, "iterations": 1000, "warmup": 100},
    "replay": {"speed": None, "grouping": "per-timestamp", "batch_size": 20, "queue_size": 8},
}
# replay.speed: null means as fast as possible


# a per-kind grid given by the user replaces the default one instead of extending it
_REPLACED = {f"grid.{k}" for k in TABLE1_PARAMS}


def _merge(base: dict, over: dict, path: str = "", depth: int = 0) -> dict:
    # sections and their keys are fixed; model parameter dicts below them are open
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in base:
            if depth >= 2:
                out[k] = copy.deepcopy(v)
                continue
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[k], dict) and isinstance(v, dict) and where not in _REPLACED:
            out[k] = _merge(base[k], v, where + ".", depth + 1)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> dict:
    """Defaults, then the file at ``path``, then ``section.key=value`` overrides.

    Override values are parsed as JSON when possible, otherwise kept as strings.
    """
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        cfg = _merge(cfg, doc)
    for item in overrides or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node: dict = {}
        cur = node
        parts = key.split(".")
        for p in parts[:-1]:
            cur[p] = {}
            cur = cur[p]
        cur[parts[-1]] = value
        cfg = _merge(cfg, node)
    return cfg
