"""Isolation Forest and Random Forest, both grown from scratch.

Trees are stored as flat node arrays (``feature < 0`` marks a leaf, rows with
``x[feature] <= threshold`` go left) so that a whole forest can be traversed
by one compiled kernel call.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _backend
from .features import FeatureInput, FeatureSchema, as_matrix, get_schema, infer_schema


class NotFittedError(RuntimeError):
    pass


def harmonic(k: int) -> float:
    """Exact harmonic number H(k); H(0) = 0."""
    return math.fsum(1.0 / i for i in range(1, k + 1))


def average_path_length(n: int) -> float:
    """c(n): mean unsuccessful-search depth in a random BST of ``n`` keys."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * harmonic(n - 1) - 2.0 * (n - 1) / n


@dataclass
class Tree:
    feature: np.ndarray      # int32, -1 at leaves
    threshold: np.ndarray    # float64
    left: np.ndarray         # int32, tree-local child index
    right: np.ndarray
    value: np.ndarray        # float64, leaf output
    n_samples: np.ndarray    # int64, samples reaching each node
    depth: np.ndarray        # int32

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def apply(self, x: np.ndarray) -> int:
        """Leaf index for a single row (slow path, used as a test oracle)."""
        node = 0
        while self.feature[node] >= 0:
            node = self.left[node] if x[self.feature[node]] <= self.threshold[node] else self.right[node]
        return node

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in
                ("feature", "threshold", "left", "right", "value", "n_samples", "depth")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.array(d["feature"], dtype=np.int32), np.array(d["threshold"], dtype=np.float64),
            np.array(d["left"], dtype=np.int32), np.array(d["right"], dtype=np.int32),
            np.array(d["value"], dtype=np.float64), np.array(d["n_samples"], dtype=np.int64),
            np.array(d["depth"], dtype=np.int32),
        )


class _TreeBuilder:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.value, self.n_samples, self.depth = [], [], []

    def add(self, n: int, depth: int) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        self.n_samples.append(n)
        self.depth.append(depth)
        return len(self.feature) - 1

    def build(self) -> Tree:
        return Tree(
            np.array(self.feature, dtype=np.int32), np.array(self.threshold, dtype=np.float64),
            np.array(self.left, dtype=np.int32), np.array(self.right, dtype=np.int32),
            np.array(self.value, dtype=np.float64), np.array(self.n_samples, dtype=np.int64),
            np.array(self.depth, dtype=np.int32),
        )


class PackedForest:
    """All trees of a forest concatenated into one set of node arrays."""

    def __init__(self, trees: list[Tree]):
        offsets = np.cumsum([0] + [t.n_nodes for t in trees[:-1]]).astype(np.int64)
        self.roots = offsets.astype(np.int32)

        def cat(name, dtype):
            return np.ascontiguousarray(np.concatenate([getattr(t, name) for t in trees]), dtype=dtype)

        self.feature = cat("feature", np.int32)
        self.threshold = cat("threshold", np.float64)
        self.value = cat("value", np.float64)
        left, right = [], []
        for off, t in zip(offsets, trees):
            leaf = t.feature < 0
            left.append(np.where(leaf, -1, t.left + off))
            right.append(np.where(leaf, -1, t.right + off))
        self.left = np.ascontiguousarray(np.concatenate(left), dtype=np.int32)
        self.right = np.ascontiguousarray(np.concatenate(right), dtype=np.int32)
        self.n_trees = len(trees)

    def leaf_sum(self, X: np.ndarray) -> np.ndarray:
        return _backend.kernels().forest_sum(
            self.feature, self.threshold, self.left, self.right, self.value, self.roots, X)


def _spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _map_trees(fn, rngs, n_jobs: int):
    if n_jobs == 1:
        return [fn(r) for r in rngs]
    with ThreadPoolExecutor(max_workers=None if n_jobs < 0 else n_jobs) as pool:
        return list(pool.map(fn, rngs))


def _check_schema(schema: FeatureSchema | str | None, X) -> FeatureSchema:
    return infer_schema(X, schema)


# ---------------------------------------------------------------------------
# Isolation Forest
# ---------------------------------------------------------------------------

def _grow_isolation_tree(X: np.ndarray, rng: np.random.Generator, max_depth: int) -> Tree:
    b = _TreeBuilder()
    root = b.add(X.shape[0], 0)
    stack = [(root, np.arange(X.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        sub = X[idx]
        if idx.shape[0] > 1 and depth < max_depth:
            lo, hi = sub.min(axis=0), sub.max(axis=0)
            candidates = np.flatnonzero(hi > lo)
        else:
            candidates = ()
        if len(candidates) == 0:
            b.value[node] = depth + average_path_length(idx.shape[0])
            continue
        f = int(candidates[rng.integers(len(candidates))])
        split = rng.uniform(lo[f], hi[f])
        while split <= lo[f]:
            split = rng.uniform(lo[f], hi[f])
        go_left = sub[:, f] <= split
        b.feature[node] = f
        b.threshold[node] = float(split)
        li, ri = idx[go_left], idx[~go_left]
        b.left[node] = b.add(li.shape[0], depth + 1)
        b.right[node] = b.add(ri.shape[0], depth + 1)
        stack.append((b.right[node], ri, depth + 1))
        stack.append((b.left[node], li, depth + 1))
    return b.build()


class IsolationForest:
    """Unsupervised isolation forest.

    ``contamination`` picks the decision threshold: ``"train_rate"`` uses the
    anomaly rate of the labels passed to :meth:`fit` (they are used for
    nothing else), a float uses that fraction, and ``"auto"`` fixes the
    threshold at a score of 0.5.
    """

    kind = "isolation_forest"

    def __init__(self, n_estimators=200, max_samples=0.005, contamination="train_rate",
                 seed=0, n_jobs=1):
        if n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        self.n_estimators = n_estimators
        self.max_samples = max_samples
        self.contamination = contamination
        self.seed = seed
        self.n_jobs = n_jobs
        self.trees_: list[Tree] | None = None

    def subsample_size(self, n: int) -> int:
        if isinstance(self.max_samples, float) and self.max_samples <= 1.0:
            psi = max(2, int(round(self.max_samples * n)))
        else:
            psi = int(self.max_samples)
        return min(psi, n)

    def fit(self, X: FeatureInput, y=None, schema: FeatureSchema | None = None) -> "IsolationForest":
        self.schema_ = _check_schema(schema, X)
        X = as_matrix(X, self.schema_)
        n = X.shape[0]
        if n < 2:
            raise ValueError("isolation forest needs at least 2 rows")
        self.subsample_size_ = psi = self.subsample_size(n)
        max_depth = int(math.ceil(math.log2(psi)))

        def grow(rng):
            rows = rng.choice(n, size=psi, replace=False)
            return _grow_isolation_tree(X[rows], rng, max_depth)

        self.trees_ = _map_trees(grow, _spawn_rngs(self.seed, self.n_estimators), self.n_jobs)
        self._pack()
        self.threshold_ = self._fit_threshold(self.score_samples(X), y)
        return self

    def _pack(self):
        self._packed = PackedForest(self.trees_)
        self._c = average_path_length(self.subsample_size_)

    def _fit_threshold(self, train_scores, y) -> float:
        c = self.contamination
        if c == "auto":
            return 0.5
        if c == "train_rate":
            if y is None:
                raise ValueError("contamination='train_rate' needs training labels")
            c = float(np.mean(y))
        if not 0.0 < c < 1.0:
            raise ValueError(f"contamination must be in (0, 1), got {c}")
        self.contamination_ = c
        return float(np.quantile(train_scores, 1.0 - c))

    def _matrix(self, X) -> np.ndarray:
        if self.trees_ is None:
            raise NotFittedError("isolation forest is not fitted")
        return as_matrix(X, self.schema_)

    def path_length(self, X: FeatureInput) -> np.ndarray:
        """Mean adjusted path length E[h(x)] over the trees."""
        X = self._matrix(X)
        return self._packed.leaf_sum(X) / self._packed.n_trees

    def score_samples(self, X: FeatureInput) -> np.ndarray:
        """Isolation score in (0, 1); higher is more anomalous."""
        return np.power(2.0, -self.path_length(X) / self._c)

    def anomaly_score(self, X: FeatureInput) -> np.ndarray:
        return self.score_samples(X)

    def predict(self, X: FeatureInput) -> np.ndarray:
        return (self.score_samples(X) > self.threshold_).astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "params": {"n_estimators": self.n_estimators, "max_samples": self.max_samples,
                       "contamination": self.contamination, "seed": self.seed},
            "schema_id": self.schema_.id,
            "subsample_size": self.subsample_size_,
            "threshold": self.threshold_,
            "trees": [t.to_dict() for t in self.trees_],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IsolationForest":
        model = cls(**d["params"])
        model.schema_ = get_schema(d["schema_id"])
        model.subsample_size_ = d["subsample_size"]
        model.threshold_ = d["threshold"]
        model.trees_ = [Tree.from_dict(t) for t in d["trees"]]
        model._pack()
        return model


# ---------------------------------------------------------------------------
# Random Forest
# ---------------------------------------------------------------------------

def gini(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.sum(p * p))


def _grow_decision_tree(X, y, rows, rng, n_try, min_samples_split, min_samples_leaf, max_depth):
    arrays = _backend.kernels().grow_decision_tree(
        X, y, rows, rng, n_try, min_samples_split, min_samples_leaf, max_depth)
    class_counts = arrays.pop("class_counts")
    return Tree(**arrays), class_counts


class RandomForest:
    """Bagged Gini decision trees; the anomaly probability is the vote share."""

    kind = "random_forest"

    def __init__(self, n_estimators=200, min_samples_split=2, min_samples_leaf=1,
                 max_features="sqrt", max_depth=None, bootstrap=True, oob_score=False,
                 seed=0, n_jobs=1):
        if n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        self.n_estimators = n_estimators
        self.min_samples_split = min_samples_split
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.max_depth = max_depth
        self.bootstrap = bootstrap
        self.oob_score = oob_score
        self.seed = seed
        self.n_jobs = n_jobs
        self.trees_: list[Tree] | None = None

    def features_per_split(self, d: int) -> int:
        mf = self.max_features
        if mf == "sqrt":
            return max(1, int(math.floor(math.sqrt(d))))
        if mf is None or mf == "all":
            return d
        if isinstance(mf, float):
            return max(1, int(mf * d))
        return max(1, min(d, int(mf)))

    def fit(self, X: FeatureInput, y, schema: FeatureSchema | None = None) -> "RandomForest":
        self.schema_ = _check_schema(schema, X)
        X = np.ascontiguousarray(as_matrix(X, self.schema_))
        y = np.asarray(y).astype(np.int64)
        if y.shape[0] != X.shape[0]:
            raise ValueError("X and y lengths differ")
        if np.unique(y).size < 2:
            raise ValueError("random forest needs both classes in y")
        n = X.shape[0]
        n_try = self.features_per_split(X.shape[1])
        yf = np.ascontiguousarray(y, dtype=np.float64)

        def grow(rng):
            rows = rng.integers(0, n, size=n) if self.bootstrap else np.arange(n)
            tree, cc = _grow_decision_tree(X, yf, rows, rng, n_try, self.min_samples_split,
                                           self.min_samples_leaf, self.max_depth)
            return tree, cc, rows

        grown = _map_trees(grow, _spawn_rngs(self.seed, self.n_estimators), self.n_jobs)
        self.trees_ = [g[0] for g in grown]
        self.class_counts_ = [g[1] for g in grown]
        self._pack()
        if self.oob_score and self.bootstrap:
            self.oob_error_ = self._oob_error(X, y, [g[2] for g in grown])
        return self

    def _pack(self):
        self._packed = PackedForest(self.trees_)

    def _oob_error(self, X, y, bags) -> float:
        votes = np.zeros(X.shape[0])
        seen = np.zeros(X.shape[0])
        for tree, rows in zip(self.trees_, bags):
            oob = np.ones(X.shape[0], dtype=bool)
            oob[rows] = False
            idx = np.flatnonzero(oob)
            if idx.size == 0:
                continue
            votes[idx] += PackedForest([tree]).leaf_sum(X[idx])
            seen[idx] += 1
        mask = seen > 0
        pred = (votes[mask] / seen[mask] >= 0.5).astype(np.int64)
        return float(np.mean(pred != y[mask]))

    def _matrix(self, X) -> np.ndarray:
        if self.trees_ is None:
            raise NotFittedError("random forest is not fitted")
        return as_matrix(X, self.schema_)

    def predict_proba(self, X: FeatureInput) -> np.ndarray:
        """Fraction of trees voting anomalous."""
        X = self._matrix(X)
        return self._packed.leaf_sum(X) / self._packed.n_trees

    def anomaly_score(self, X: FeatureInput) -> np.ndarray:
        return self.predict_proba(X)

    def predict(self, X: FeatureInput) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(np.int64)

    def tree_votes(self, X: FeatureInput) -> np.ndarray:
        """Per-tree 0/1 votes, shape ``(n, n_trees)``, by one-row-at-a-time descent."""
        X = self._matrix(X)
        return np.array([[t.value[t.apply(x)] for t in self.trees_] for x in X])

    def to_dict(self) -> dict:
        return {
            "params": {"n_estimators": self.n_estimators, "min_samples_split": self.min_samples_split,
                       "min_samples_leaf": self.min_samples_leaf, "max_features": self.max_features,
                       "max_depth": self.max_depth, "bootstrap": self.bootstrap, "seed": self.seed},
            "schema_id": self.schema_.id,
            "trees": [t.to_dict() for t in self.trees_],
            "class_counts": [c.tolist() for c in self.class_counts_],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RandomForest":
        model = cls(**d["params"])
        model.schema_ = get_schema(d["schema_id"])
        model.trees_ = [Tree.from_dict(t) for t in d["trees"]]
        model.class_counts_ = [np.array(c, dtype=np.int64).reshape(-1, 2) for c in d["class_counts"]]
        model._pack()
        return model


def train_isolation_forest(X: FeatureInput, y=None, seed: int = 0, **params) -> IsolationForest:
    return IsolationForest(seed=seed, **params).fit(X, y)


def if_score(model: IsolationForest, x: FeatureInput) -> np.ndarray:
    return model.score_samples(x)


def train_random_forest(X: FeatureInput, y, seed: int = 0, **params) -> RandomForest:
    return RandomForest(seed=seed, **params).fit(X, y)


def rf_predict(model: RandomForest, x: FeatureInput) -> tuple[np.ndarray, np.ndarray]:
    """``(labels, anomaly probabilities)``; a 50/50 vote is labelled anomalous."""
    proba = model.predict_proba(x)
    return (proba >= 0.5).astype(np.int64), proba
