"""Feedforward autoencoder, one-class SVM, and the AE -> one-class-SVM hybrid."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .features import FeatureInput, FeatureSchema, Scaler, as_matrix, get_schema, infer_schema
from .forest import NotFittedError


class TrainingDivergedError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, gap: float, iterations: int):
        super().__init__(message)
        self.gap = gap
        self.iterations = iterations


_ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(z.dtype)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
}


@dataclass
class MlpParams:
    widths: tuple[int, ...]
    activation: str = "relu"
    dropout_rate: float = 0.0
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer: str = "sgd"
    seed: int = 0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 3 or self.widths[0] != self.widths[-1]:
            raise ValueError(f"autoencoder widths must start and end with the input width: {self.widths}")
        hidden = self.widths[1:-1]
        if tuple(reversed(hidden)) != hidden:
            raise ValueError(f"hidden widths must be symmetric: {hidden}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("learning_rate, epochs and batch_size must be positive")


class Mlp:
    """Dense network with a shared hidden activation and a linear output."""

    def __init__(self, params: MlpParams, weights=None, biases=None):
        self.params = params
        self._act, self._dact = _ACTIVATIONS[params.activation]
        if weights is None:
            rng = np.random.default_rng(params.seed)
            weights, biases = [], []
            for fan_in, fan_out in zip(params.widths[:-1], params.widths[1:]):
                limit = math.sqrt(6.0 / (fan_in + fan_out))
                weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
                biases.append(np.zeros(fan_out))
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def forward(self, X, upto: int | None = None, rng: np.random.Generator | None = None,
                cache: bool = False):
        """Run the first ``upto`` layers (all by default).

        Dropout is applied to hidden activations only when ``rng`` is given.
        With ``cache`` the pre-activations, activations and dropout masks are
        returned for :meth:`backward`.
        """
        upto = self.n_layers if upto is None else upto
        a = X
        zs, acts, masks = [], [X], []
        p = self.params.dropout_rate
        for k in range(upto):
            z = a @ self.weights[k] + self.biases[k]
            if k == self.n_layers - 1:
                a = z
                mask = None
            else:
                a = self._act(z)
                mask = None
                if rng is not None and p > 0:
                    mask = (rng.random(a.shape) >= p) / (1.0 - p)
                    a = a * mask
            zs.append(z)
            acts.append(a)
            masks.append(mask)
        if cache:
            return a, (zs, acts, masks)
        return a

    def loss(self, X, rng=None) -> float:
        out = self.forward(X, rng=rng)
        return float(np.mean((out - X) ** 2))

    def backward(self, X, cache):
        """Gradients of the mean squared reconstruction error."""
        zs, acts, masks = cache
        out = acts[-1]
        grad = 2.0 * (out - X) / out.size
        gw, gb = [None] * self.n_layers, [None] * self.n_layers
        for k in range(self.n_layers - 1, -1, -1):
            if k != self.n_layers - 1:
                if masks[k] is not None:
                    grad = grad * masks[k]
                # pre-dropout activation needed by tanh'
                a_pre = acts[k + 1] if masks[k] is None else self._act(zs[k])
                grad = grad * self._dact(zs[k], a_pre)
            gw[k] = acts[k].T @ grad
            gb[k] = grad.sum(axis=0)
            if k:
                grad = grad @ self.weights[k].T
        return gw, gb

    def to_dict(self) -> dict:
        p = self.params
        return {
            "params": {"widths": list(p.widths), "activation": p.activation, "dropout_rate": p.dropout_rate,
                       "epochs": p.epochs, "batch_size": p.batch_size, "learning_rate": p.learning_rate,
                       "optimizer": p.optimizer, "seed": p.seed},
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        return cls(MlpParams(**d["params"]), d["weights"], d["biases"])


def train_mlp(X: np.ndarray, params: MlpParams) -> tuple[Mlp, list[float]]:
    """Mini-batch training of a reconstruction MLP.

    Returns the network and the full-data loss (dropout off) before training
    and after every epoch.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < params.batch_size:
        raise ValueError(f"need at least batch_size={params.batch_size} rows, got {X.shape[0]}")
    net = Mlp(params)
    rng = np.random.default_rng(np.random.SeedSequence(params.seed).spawn(1)[0])
    lr = params.learning_rate
    adam = params.optimizer == "adam"
    if adam:
        b1, b2, eps = 0.9, 0.999, 1e-8
        m = [np.zeros_like(w) for w in net.weights + net.biases]
        v = [np.zeros_like(w) for w in net.weights + net.biases]
        step = 0
    history = [net.loss(X)]
    n = X.shape[0]
    for epoch in range(params.epochs):
        order = rng.permutation(n)
        for start in range(0, n, params.batch_size):
            batch = X[order[start:start + params.batch_size]]
            _, cache = net.forward(batch, rng=rng, cache=True)
            gw, gb = net.backward(batch, cache)
            grads = gw + gb
            tensors = net.weights + net.biases
            if adam:
                step += 1
                for k, (t, g) in enumerate(zip(tensors, grads)):
                    m[k] = b1 * m[k] + (1 - b1) * g
                    v[k] = b2 * v[k] + (1 - b2) * g * g
                    t -= lr * (m[k] / (1 - b1 ** step)) / (np.sqrt(v[k] / (1 - b2 ** step)) + eps)
            else:
                for t, g in zip(tensors, grads):
                    t -= lr * g
        loss = net.loss(X)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"loss became {loss} in epoch {epoch + 1}")
        history.append(loss)
    return net, history


def _contamination_threshold(values: np.ndarray, contamination, y) -> float:
    c = contamination
    if c == "train_rate":
        if y is None:
            raise ValueError("contamination='train_rate' needs training labels")
        c = float(np.mean(y))
    if not 0.0 < c < 1.0:
        raise ValueError(f"contamination must be in (0, 1), got {c}")
    return float(np.quantile(values, 1.0 - c))


def _schema(schema, X) -> FeatureSchema:
    return infer_schema(X, schema)


class AutoEncoder:
    """Reconstruction-error detector on standardised features."""

    kind = "autoencoder"

    def __init__(self, hidden=(32, 16, 16, 32), activation="relu", dropout_rate=0.05, epochs=100,
                 batch_size=16, learning_rate=1e-3, optimizer="sgd", contamination="train_rate", seed=0):
        self.hidden = tuple(hidden)
        self.activation = activation
        self.dropout_rate = dropout_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.contamination = contamination
        self.seed = seed
        self.net_: Mlp | None = None

    def _params(self, d: int) -> MlpParams:
        return MlpParams((d, *self.hidden, d), self.activation, self.dropout_rate, self.epochs,
                         self.batch_size, self.learning_rate, self.optimizer, self.seed)

    def fit(self, X: FeatureInput, y=None, schema: FeatureSchema | None = None) -> "AutoEncoder":
        self.schema_ = _schema(schema, X)
        raw = as_matrix(X, self.schema_)
        self.scaler_ = Scaler.fit(raw, self.schema_)
        Xs = self.scaler_.transform(raw)
        self.net_, self.loss_history_ = train_mlp(Xs, self._params(Xs.shape[1]))
        self.threshold_ = _contamination_threshold(self._errors(Xs), self.contamination, y)
        return self

    def _errors(self, Xs: np.ndarray) -> np.ndarray:
        recon = self.net_.forward(Xs)
        return np.sum((Xs - recon) ** 2, axis=1)

    def _scaled(self, X) -> np.ndarray:
        if self.net_ is None:
            raise NotFittedError("autoencoder is not fitted")
        return self.scaler_.transform(as_matrix(X, self.schema_))

    def encode(self, X: FeatureInput) -> np.ndarray:
        return self.net_.forward(self._scaled(X), upto=(len(self.hidden) + 1) // 2)

    def reconstruction_error(self, X: FeatureInput) -> np.ndarray:
        """Squared Euclidean reconstruction error in standardised units."""
        return self._errors(self._scaled(X))

    def anomaly_score(self, X: FeatureInput) -> np.ndarray:
        return self.reconstruction_error(X)

    def predict(self, X: FeatureInput) -> np.ndarray:
        return (self.reconstruction_error(X) > self.threshold_).astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "params": {"hidden": list(self.hidden), "activation": self.activation,
                       "dropout_rate": self.dropout_rate, "epochs": self.epochs,
                       "batch_size": self.batch_size, "learning_rate": self.learning_rate,
                       "optimizer": self.optimizer, "contamination": self.contamination, "seed": self.seed},
            "schema_id": self.schema_.id,
            "scaler": self.scaler_.to_dict(),
            "net": self.net_.to_dict(),
            "threshold": self.threshold_,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AutoEncoder":
        model = cls(**d["params"])
        model.schema_ = get_schema(d["schema_id"])
        model.scaler_ = Scaler.from_dict(d["scaler"])
        model.net_ = Mlp.from_dict(d["net"])
        model.threshold_ = d["threshold"]
        return model


def rbf_kernel(A, B, sigma: float) -> np.ndarray:
    """exp(-|a - b|^2 / (2 sigma^2)) for every pair of rows."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-np.maximum(sq, 0.0) / (2.0 * sigma * sigma))


@dataclass
class OneClassSvm:
    """nu-one-class SVM with a Gaussian kernel.

    The dual ``min 1/2 a'Ka`` subject to ``0 <= a_i <= 1/(nu n)`` and
    ``sum(a) = 1`` is solved by pairwise (SMO) updates. Decision value
    ``f(z) = sum_i a_i k(z_i, z) - rho``; negative means outlier.
    """

    sigma: float = 1.0
    nu: float = 0.1
    tol: float = 1e-4
    max_iter: int = 1_000_000
    seed: int = 0
    support_vectors_: np.ndarray | None = field(default=None, repr=False)
    dual_coef_: np.ndarray | None = field(default=None, repr=False)
    rho_: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0.0 < self.nu <= 1.0:
            raise ValueError("nu must be in (0, 1]")

    def fit(self, Z) -> "OneClassSvm":
        Z = np.ascontiguousarray(Z, dtype=np.float64)
        n = Z.shape[0]
        if n < 2:
            raise ValueError("one-class SVM needs at least 2 points")
        C = 1.0 / (self.nu * n)
        # feasible start: fill random points to the bound until the mass is 1
        order = np.random.default_rng(self.seed).permutation(n)
        alpha = np.zeros(n)
        n_full = min(int(math.floor(self.nu * n)), n)
        alpha[order[:n_full]] = C
        rest = 1.0 - n_full * C
        if n_full < n and rest > 0:
            alpha[order[n_full]] = min(rest, C)
        gamma = 1.0 / (2.0 * self.sigma ** 2)
        G, iters, gap = _backend.kernels().ocsvm_smo(Z, gamma, C, alpha, self.tol, self.max_iter)
        if gap >= self.tol:
            raise ConvergenceError(
                f"SMO stopped after {iters} iterations with KKT gap {gap:.3g} > tol {self.tol}", gap, iters)
        self.n_iter_ = iters
        self.kkt_gap_ = gap
        self.C_ = C
        self.rho_ = _offset(alpha, G, C)
        sv = alpha > 0
        self.support_vectors_ = Z[sv]
        self.dual_coef_ = alpha[sv]
        self.alpha_ = alpha
        self.train_decision_ = G - self.rho_
        return self

    def decision_function(self, Z) -> np.ndarray:
        if self.support_vectors_ is None:
            raise NotFittedError("one-class SVM is not fitted")
        K = rbf_kernel(Z, self.support_vectors_, self.sigma)
        return K @ self.dual_coef_ - self.rho_

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "nu": self.nu, "tol": self.tol, "seed": self.seed,
                "support_vectors": self.support_vectors_.tolist(),
                "dual_coef": self.dual_coef_.tolist(), "rho": self.rho_}

    @classmethod
    def from_dict(cls, d: dict) -> "OneClassSvm":
        m = cls(sigma=d["sigma"], nu=d["nu"], tol=d["tol"], seed=d["seed"])
        m.support_vectors_ = np.array(d["support_vectors"], dtype=np.float64)
        m.dual_coef_ = np.array(d["dual_coef"], dtype=np.float64)
        m.rho_ = d["rho"]
        return m


def _offset(alpha, G, C) -> float:
    """Smallest gradient among multipliers below the bound.

    At the exact optimum every such point has ``G >= rho`` and the free ones
    sit at ``G == rho``; with a finite KKT tolerance the free gradients spread
    over a band of width ``tol``. Taking the bottom of the band keeps every
    point with ``f < 0`` a bounded support vector, so at most ``nu * n``
    training points are outliers.
    """
    below = alpha < C
    if not below.any():
        return float(np.max(G))
    return float(np.min(G[below]))


class AE1SVM:
    """Autoencoder trained first, then frozen; a one-class SVM fits its codes."""

    kind = "ae1svm"

    def __init__(self, hidden=(16, 8, 8, 16), activation="tanh", dropout_rate=0.3, epochs=75,
                 batch_size=16, learning_rate=1e-3, optimizer="sgd", sigma=1.0, nu=0.1,
                 svm_tol=1e-4, seed=0):
        self.hidden = tuple(hidden)
        self.activation = activation
        self.dropout_rate = dropout_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.sigma = sigma
        self.nu = nu
        self.svm_tol = svm_tol
        self.seed = seed
        self.encoder_: AutoEncoder | None = None

    def fit(self, X: FeatureInput, y=None, schema: FeatureSchema | None = None) -> "AE1SVM":
        self.schema_ = _schema(schema, X)
        ae = AutoEncoder(self.hidden, self.activation, self.dropout_rate, self.epochs, self.batch_size,
                         self.learning_rate, self.optimizer, contamination=0.5, seed=self.seed)
        self.encoder_ = ae.fit(X, schema=self.schema_)
        Z = ae.encode(X)
        self.svm_ = OneClassSvm(self.sigma, self.nu, tol=self.svm_tol, seed=self.seed).fit(Z)
        return self

    def decision_function(self, X: FeatureInput) -> np.ndarray:
        """Signed SVM value of the latent code; negative is anomalous."""
        if self.encoder_ is None:
            raise NotFittedError("AE-1SVM is not fitted")
        return self.svm_.decision_function(self.encoder_.encode(X))

    def anomaly_score(self, X: FeatureInput) -> np.ndarray:
        return -self.decision_function(X)

    def predict(self, X: FeatureInput) -> np.ndarray:
        return (self.decision_function(X) < 0).astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "params": {"hidden": list(self.hidden), "activation": self.activation,
                       "dropout_rate": self.dropout_rate, "epochs": self.epochs,
                       "batch_size": self.batch_size, "learning_rate": self.learning_rate,
                       "optimizer": self.optimizer, "sigma": self.sigma, "nu": self.nu,
                       "svm_tol": self.svm_tol, "seed": self.seed},
            "schema_id": self.schema_.id,
            "encoder": self.encoder_.to_dict(),
            "svm": self.svm_.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AE1SVM":
        model = cls(**d["params"])
        model.schema_ = get_schema(d["schema_id"])
        model.encoder_ = AutoEncoder.from_dict(d["encoder"])
        model.svm_ = OneClassSvm.from_dict(d["svm"])
        return model


def train_autoencoder(X: FeatureInput, y=None, **params) -> AutoEncoder:
    return AutoEncoder(**params).fit(X, y)


def reconstruction_error(model: AutoEncoder, x: FeatureInput) -> np.ndarray:
    return model.reconstruction_error(x)


def train_one_class_svm(Z, sigma: float = 1.0, nu: float = 0.1, seed: int = 0, **kw) -> OneClassSvm:
    return OneClassSvm(sigma=sigma, nu=nu, seed=seed, **kw).fit(Z)


def ae1svm_score(model: AE1SVM, x: FeatureInput) -> np.ndarray:
    return model.decision_function(x)
