"""Registry of the four detector kinds and their deployed hyperparameters."""
from __future__ import annotations

from typing import Union

import numpy as np

from .forest import IsolationForest, RandomForest
from .neural import AE1SVM, AutoEncoder

DetectorModel = Union[IsolationForest, RandomForest, AutoEncoder, AE1SVM]

MODEL_KINDS: dict[str, type] = {
    IsolationForest.kind: IsolationForest,
    RandomForest.kind: RandomForest,
    AutoEncoder.kind: AutoEncoder,
    AE1SVM.kind: AE1SVM,
}

SUPERVISED = frozenset({RandomForest.kind})

#: Published configuration of each model.
TABLE1_PARAMS: dict[str, dict] = {
    "isolation_forest": {"max_samples": 0.005, "n_estimators": 200},
    "random_forest": {"min_samples_leaf": 1, "min_samples_split": 2, "n_estimators": 200},
    "autoencoder": {"batch_size": 16, "dropout_rate": 0.05, "epochs": 100, "activation": "relu",
                    "hidden": [32, 16, 16, 32]},
    "ae1svm": {"batch_size": 16, "dropout_rate": 0.3, "epochs": 75, "activation": "tanh",
               "hidden": [16, 8, 8, 16], "sigma": 1.0, "nu": 0.1},
}

#: Display names in result tables.
DISPLAY_NAMES = {
    "isolation_forest": "Isolation Forest",
    "random_forest": "Random Forest",
    "autoencoder": "AutoEncoder",
    "ae1svm": "AE-1SVM",
}


def build_model(kind: str, **params) -> DetectorModel:
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(MODEL_KINDS)}") from None
    return cls(**params)


def fit_model(kind: str, X, y, schema=None, **params) -> DetectorModel:
    """Train ``kind`` on ``X``.

    Labels reach unsupervised models only to set the contamination threshold.
    """
    return build_model(kind, **params).fit(X, y, schema=schema)


def default_params(kind: str, **overrides) -> dict:
    params = dict(TABLE1_PARAMS[kind])
    params.update(overrides)
    return params


def decide(model: DetectorModel, scores: np.ndarray) -> np.ndarray:
    """Binary labels from :meth:`anomaly_score` output, identical to ``model.predict``."""
    scores = np.asarray(scores)
    if model.kind == "random_forest":
        flags = scores >= 0.5
    elif model.kind == "ae1svm":
        flags = scores > 0.0
    else:
        flags = scores > model.threshold_
    return flags.astype(np.int64)


def score_and_label(model: DetectorModel, X) -> tuple[np.ndarray, np.ndarray]:
    """One scoring pass giving both the continuous score and the label."""
    scores = model.anomaly_score(X)
    return scores, decide(model, scores)
