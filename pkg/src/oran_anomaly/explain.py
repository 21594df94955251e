"""Model-agnostic explanations: permutation importance and sampled Shapley values."""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

ScoreFn = Callable[[np.ndarray], np.ndarray]

_CHUNK_ROWS = 65_536


@dataclass
class ImportanceReport:
    """Per-feature scores in schema order.

    For ``method == "shapley"`` the scores are mean absolute attributions and
    ``samples`` is the number of sampled permutations per explained point.
    """

    method: str
    features: list[str]
    scores: list[float]
    samples: int
    seed: int
    spread: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.method not in ("permutation", "shapley"):
            raise ValueError(f"unknown importance method {self.method!r}")
        if len(self.features) != len(self.scores):
            raise ValueError("one score per feature required")

    def items(self) -> list[tuple[str, float]]:
        return list(zip(self.features, self.scores))

    def ranking(self) -> list[str]:
        """Feature names, most important first (stable for ties)."""
        order = sorted(range(len(self.scores)), key=lambda j: -self.scores[j])
        return [self.features[j] for j in order]

    def rank_of(self, name: str) -> int:
        return self.ranking().index(name)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ImportanceReport":
        return cls(**d)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["feature", "score"])
        for name, score in self.items():
            w.writerow([name, repr(float(score))])
        return buf.getvalue()


def _feature_names(model, X, d: int) -> list[str]:
    schema = getattr(X, "schema", None) or getattr(model, "schema_", None)
    if schema is not None and schema.width == d:
        return list(schema.names)
    return [f"x{j}" for j in range(d)]


def _predict_fn(model) -> Callable[[np.ndarray], np.ndarray]:
    return model.predict if hasattr(model, "predict") else model


def score_function(model) -> ScoreFn:
    """Continuous output explained for ``model``.

    Isolation score, class-1 vote share, reconstruction error, or negated SVM
    value, depending on the detector: all are "higher is more anomalous".
    """
    return model.anomaly_score


# ---------------------------------------------------------- permutation

def permutation_importance(model, X, y, repeats: int = 10, seed: int = 0,
                           feature_names: list[str] | None = None) -> ImportanceReport:
    """Mean accuracy drop when each column is shuffled.

    ``model`` is a fitted detector or a bare ``predict`` callable. The
    baseline accuracy is computed once; every (feature, repeat) pair draws its
    own seeded shuffle, so the result does not depend on evaluation order.
    """
    Xa = np.array(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64).ravel()
    n, d = Xa.shape
    if n < 2 or y.shape[0] != n:
        raise ValueError("need |X| == |y| > 1")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    predict = _predict_fn(model)
    names = feature_names or _feature_names(model, X, d)
    baseline = float(np.mean(predict(Xa) == y))
    seqs = np.random.SeedSequence(seed).spawn(d)
    scores, spread = [], []
    for j in range(d):
        rng = np.random.default_rng(seqs[j])
        drops = np.empty(repeats)
        saved = Xa[:, j].copy()
        for r in range(repeats):
            Xa[:, j] = saved[rng.permutation(n)]
            drops[r] = baseline - float(np.mean(predict(Xa) == y))
        Xa[:, j] = saved
        scores.append(float(drops.mean()))
        spread.append(float(drops.std()))
    return ImportanceReport("permutation", names, scores, repeats, seed, spread)


# ---------------------------------------------------------- shapley

def _batched(score_fn: ScoreFn, Z: np.ndarray) -> np.ndarray:
    if Z.shape[0] <= _CHUNK_ROWS:
        return np.asarray(score_fn(Z), dtype=np.float64)
    return np.concatenate([np.asarray(score_fn(Z[i:i + _CHUNK_ROWS]), dtype=np.float64)
                           for i in range(0, Z.shape[0], _CHUNK_ROWS)])


def shapley_values(score_fn: ScoreFn, x, background, n_samples: int = 100,
                   seed: int | np.random.SeedSequence = 0) -> tuple[np.ndarray, np.ndarray]:
    """Sampled Shapley attribution of ``score_fn`` at ``x``.

    Each sample draws a feature permutation and a background row, then walks
    from the background row to ``x`` one feature at a time in permutation
    order; the score change at each step is credited to the feature switched.
    The estimate is unbiased for the Shapley values of the game
    ``v(S) = mean_b score(x_S, b_rest)`` over the background rows.

    Returns
    -------
    values, stderr : ndarray of shape (d,)
        Estimates and their Monte-Carlo standard errors.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    B = np.atleast_2d(np.asarray(background, dtype=np.float64))
    d = x.shape[0]
    if B.shape[0] == 0 or B.shape[1] != d:
        raise ValueError("background must be a non-empty (m, d) array")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    perms = np.argsort(rng.random((n_samples, d)), axis=1)
    picks = rng.integers(0, B.shape[0], size=n_samples)

    # path[s, k] has the first k features of perms[s] taken from x
    path = np.repeat(B[picks][:, None, :], d + 1, axis=1)
    steps = np.arange(d + 1)
    rank = np.empty_like(perms)
    np.put_along_axis(rank, perms, np.arange(d)[None, :], axis=1)
    from_x = rank[:, None, :] < steps[None, :, None]
    path = np.where(from_x, x[None, None, :], path)

    f = _batched(score_fn, path.reshape(-1, d)).reshape(n_samples, d + 1)
    step_gain = np.diff(f, axis=1)                     # gain of the k-th switched feature
    contrib = np.take_along_axis(step_gain, rank, axis=1)  # reorder into feature order
    values = contrib.mean(axis=0)
    if n_samples > 1:
        stderr = contrib.std(axis=0, ddof=1) / np.sqrt(n_samples)
    else:
        stderr = np.full(d, np.inf)
    return values, stderr


def sample_background(X, size: int = 100, seed: int = 0) -> np.ndarray:
    """Up to ``size`` training rows drawn without replacement."""
    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(seed)
    if X.shape[0] <= size:
        return X.copy()
    return X[np.sort(rng.choice(X.shape[0], size=size, replace=False))]


def shapley_matrix(score_fn: ScoreFn, X, background, n_samples: int = 100, seed: int = 0,
                   n_jobs: int = 1) -> np.ndarray:
    """Attributions of every row of ``X``; row ``i`` uses the ``i``-th spawned seed."""
    Xa = np.atleast_2d(np.asarray(X, dtype=np.float64))
    seqs = np.random.SeedSequence(seed).spawn(Xa.shape[0])

    def one(i):
        return shapley_values(score_fn, Xa[i], background, n_samples, seqs[i])[0]

    if n_jobs == 1:
        rows = [one(i) for i in range(Xa.shape[0])]
    else:
        with ThreadPoolExecutor(max_workers=None if n_jobs < 0 else n_jobs) as pool:
            rows = list(pool.map(one, range(Xa.shape[0])))
    return np.array(rows).reshape(Xa.shape[0], -1)


def global_importance(model, X, background, n_samples: int = 100, seed: int = 0,
                      feature_names: list[str] | None = None, n_jobs: int = 1) -> ImportanceReport:
    """Mean absolute Shapley value per feature over the rows of ``X``.

    ``model`` is a fitted detector (its :func:`score_function` is explained)
    or a bare score callable.
    """
    fn = score_function(model) if hasattr(model, "anomaly_score") else model
    phi = shapley_matrix(fn, X, background, n_samples, seed, n_jobs)
    names = feature_names or _feature_names(model, X, phi.shape[1])
    mag = np.abs(phi)
    return ImportanceReport("shapley", names, mag.mean(axis=0).tolist(), n_samples, seed,
                            mag.std(axis=0).tolist())
