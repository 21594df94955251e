"""Binary classification metrics, model evaluation and hyperparameter search."""
from __future__ import annotations

import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .detectors import DISPLAY_NAMES, SUPERVISED, build_model

log = logging.getLogger(__name__)


def _div(num: float, den: float) -> float:
    # 0/0 is reported as 0 throughout
    return float(num) / den if den else 0.0


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with class 1 (anomalous) as the positive class."""

    tp: int
    fp: int
    fn: int
    tn: int

    @classmethod
    def from_labels(cls, y_true, y_pred) -> "ConfusionMatrix":
        t = np.asarray(y_true).astype(np.int64).ravel()
        p = np.asarray(y_pred).astype(np.int64).ravel()
        if t.shape != p.shape:
            raise ValueError(f"label shapes differ: {t.shape} vs {p.shape}")
        if t.size and (not np.isin(t, (0, 1)).all() or not np.isin(p, (0, 1)).all()):
            raise ValueError("labels must be 0 or 1")
        return cls(
            tp=int(np.sum((t == 1) & (p == 1))),
            fp=int(np.sum((t == 0) & (p == 1))),
            fn=int(np.sum((t == 1) & (p == 0))),
            tn=int(np.sum((t == 0) & (p == 0))),
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def precision(self, cls: int = 1) -> float:
        return _div(self.tp, self.tp + self.fp) if cls == 1 else _div(self.tn, self.tn + self.fn)

    def recall(self, cls: int = 1) -> float:
        return _div(self.tp, self.tp + self.fn) if cls == 1 else _div(self.tn, self.tn + self.fp)

    def f1(self, cls: int = 1) -> float:
        p, r = self.precision(cls), self.recall(cls)
        return _div(2 * p * r, p + r)

    def f1_macro(self) -> float:
        return 0.5 * (self.f1(0) + self.f1(1))

    def accuracy(self) -> float:
        return _div(self.tp + self.tn, self.total)


@dataclass
class EvalReport:
    """Headline metrics of one model on one labelled set."""

    confusion: ConfusionMatrix
    precision_pos: float
    recall_pos: float
    precision_neg: float
    recall_neg: float
    f1_pos: float
    f1_neg: float
    f1_macro: float
    accuracy: float
    model: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["confusion"] = ConfusionMatrix(**d["confusion"])
        return cls(**d)


def metrics(cm: ConfusionMatrix, model: str = "") -> EvalReport:
    """All headline metrics from the confusion matrix alone."""
    if any(v < 0 for v in (cm.tp, cm.fp, cm.fn, cm.tn)):
        raise ValueError(f"negative count in {cm}")
    return EvalReport(
        confusion=cm,
        precision_pos=cm.precision(1), recall_pos=cm.recall(1),
        precision_neg=cm.precision(0), recall_neg=cm.recall(0),
        f1_pos=cm.f1(1), f1_neg=cm.f1(0),
        f1_macro=cm.f1_macro(), accuracy=cm.accuracy(), model=model,
    )


def score_labels(y_true, y_pred, model: str = "") -> EvalReport:
    return metrics(ConfusionMatrix.from_labels(y_true, y_pred), model)


def evaluate(model, X, y) -> EvalReport:
    """Score a fitted detector on held-out labelled rows."""
    name = DISPLAY_NAMES.get(getattr(model, "kind", ""), type(model).__name__)
    return score_labels(y, model.predict(X), model=name)


def format_table(reports: list[EvalReport]) -> str:
    """Fixed-width table: precision and recall of the anomalous class, macro F1, accuracy."""
    head = f"{'Model':<18}{'Precision(1)':>14}{'Recall(1)':>11}{'F1':>8}{'Accuracy':>10}"
    lines = [head, "-" * len(head)]
    for r in reports:
        lines.append(f"{r.model:<18}{r.precision_pos:>14.2f}{r.recall_pos:>11.2f}"
                     f"{r.f1_macro:>8.2f}{r.accuracy * 100:>9.0f}%")
    return "\n".join(lines)


def reports_to_json(reports: list[EvalReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True)


# ---------------------------------------------------------------- grid search

def _param_key(params: dict) -> tuple:
    # canonical lexicographic order over (name, value) pairs
    return tuple((k, json.dumps(params[k], sort_keys=True)) for k in sorted(params))


def expand_grid(grid: dict[str, list]) -> list[dict]:
    """Cartesian product of ``grid``, sorted into canonical parameter order."""
    if not grid:
        return [{}]
    names = sorted(grid)
    for k in names:
        if not isinstance(grid[k], (list, tuple)) or len(grid[k]) == 0:
            raise ValueError(f"grid entry {k!r} must be a non-empty list")
    combos = [dict(zip(names, vals)) for vals in itertools.product(*(grid[k] for k in names))]
    return sorted(combos, key=_param_key)


def stratified_folds(y, n_folds: int, seed: int) -> list[np.ndarray]:
    """Row indices of each fold; every class is dealt round-robin after shuffling."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(n_folds)]
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        for k in range(n_folds):
            folds[k].extend(idx[k::n_folds].tolist())
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds]


@dataclass
class GridTrial:
    params: dict
    score: float | None
    error: str | None = None


@dataclass
class GridResult:
    kind: str
    best_params: dict
    best_score: float
    trials: list[GridTrial] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _score_config(kind, params, X, y, seed, n_folds) -> float:
    if kind in SUPERVISED:
        scores = []
        folds = stratified_folds(y, n_folds, seed)
        for k in range(n_folds):
            val = folds[k]
            tr = np.sort(np.concatenate([folds[j] for j in range(n_folds) if j != k]))
            model = build_model(kind, **params).fit(X[tr], y[tr])
            scores.append(score_labels(y[val], model.predict(X[val])).f1_macro)
        return float(np.mean(scores))
    # unsupervised: fit and score on the full training set
    model = build_model(kind, **params).fit(X, y)
    return score_labels(y, model.predict(X)).f1_macro


def _try_config(kind, params, X, y, seed, n_folds) -> GridTrial:
    try:
        return GridTrial(params, _score_config(kind, params, X, y, seed, n_folds))
    except Exception as exc:  # noqa: BLE001 - a bad configuration must not end the search
        log.warning("grid config %s failed: %s", params, exc)
        return GridTrial(params, None, f"{type(exc).__name__}: {exc}")


def grid_search(kind: str, grid: dict[str, list], X, y, seed: int = 0, n_folds: int = 3,
                fixed: dict | None = None, n_jobs: int = 1) -> GridResult:
    """Exhaustive search maximising macro F1.

    Supervised kinds use stratified ``n_folds``-fold cross validation on the
    training rows; unsupervised kinds are fitted and scored on all of them.
    Ties go to the earliest configuration in canonical parameter order.
    Configurations that raise are recorded and skipped.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if not grid:
        raise ValueError("grid must not be empty")
    fixed = dict(fixed or {})
    configs = expand_grid(grid)

    def run(params):
        trial = _try_config(kind, {**fixed, **params}, X, y, seed, n_folds)
        trial.params = params
        return trial

    if n_jobs == 1:
        trials = [run(p) for p in configs]
    else:
        with ThreadPoolExecutor(max_workers=None if n_jobs < 0 else n_jobs) as pool:
            trials = list(pool.map(run, configs))
    # trials are in canonical order, so the first maximum wins ties
    best: GridTrial | None = None
    for trial in trials:
        if trial.score is not None and (best is None or trial.score > best.score):
            best = trial
    if best is None:
        raise RuntimeError(f"every grid configuration for {kind} failed")
    return GridResult(kind, best.params, float(best.score), trials)
