"""Classifiers under test: a two-layer ReLU MLP and a logistic linear model.

Both expose probability predictions and input gradients in encoded space.
Training is plain numpy so runs are deterministic per seed.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from . import _rng
from .errors import DimensionMismatch, Divergence, SchemaMismatch, SingleClassAuroc

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
ACCURACY = "accuracy"
AUROC = "auroc"


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _rectify(z, activation):
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "identity":
        return z
    raise ValueError(f"unknown activation {activation!r}")


def _rectify_grad(z, activation):
    if activation == "relu":
        return (z > 0).astype(float)  # subgradient 0 at the kink
    return np.ones_like(z)


@dataclass(frozen=True)
class MlpModel:
    W1: np.ndarray  # (h, d_enc)
    b1: np.ndarray  # (h,)
    W2: np.ndarray  # (h,)
    b2: float
    activation: str = "relu"  # "identity" is a test hook

    def __post_init__(self):
        for name in ("W1", "b1", "W2"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "b2", float(self.b2))
        if self.W1.ndim != 2 or self.W1.shape[0] < 1:
            raise ValueError("W1 must be h x d_enc with h >= 1")
        if self.b1.shape != (self.W1.shape[0],) or self.W2.shape != (self.W1.shape[0],):
            raise ValueError("b1 and W2 must have length h")

    @property
    def d_enc(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    def preactivation(self, X):
        X = np.asarray(X, dtype=float)
        # 2-D matmul keeps BLAS on the fast path for stacked inputs
        flat = X.reshape(-1, X.shape[-1]) @ self.W1.T
        flat += self.b1
        return flat.reshape(X.shape[:-1] + (self.hidden,))

    def logit(self, X):
        z = self.preactivation(X)
        if self.activation == "relu":
            np.maximum(z, 0.0, out=z)
        else:
            z = _rectify(z, self.activation)
        return z @ self.W2 + self.b2

    def logit_gradient(self, X):
        z = self.preactivation(X)
        return (_rectify_grad(z, self.activation) * self.W2) @ self.W1


@dataclass(frozen=True)
class LinearModel:
    w: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", float(self.b))

    @property
    def d_enc(self) -> int:
        return self.w.shape[0]

    def logit(self, X):
        return X @ self.w + self.b

    def logit_gradient(self, X):
        return np.broadcast_to(self.w, np.shape(X)).copy()


def _check_dims(model, X):
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != model.d_enc:
        raise DimensionMismatch(f"expected {model.d_enc} encoded columns, got {X.shape[-1]}")
    return X


def logit(model, X) -> np.ndarray:
    return model.logit(_check_dims(model, X))


def predict(model, X) -> np.ndarray:
    """Probability of class 1 for each row of ``X`` (encoded space)."""
    return sigmoid(logit(model, X))


def input_gradient(model, X, output: str = "probability") -> np.ndarray:
    """Gradient of the probability (or the logit) w.r.t. each encoded input.

    Accepts a single row or a matrix; returns the same shape.
    """
    X = _check_dims(model, X)
    single = X.ndim == 1
    X2 = np.atleast_2d(X)
    g = model.logit_gradient(X2)
    if output == "probability":
        p = sigmoid(model.logit(X2))
        g = g * (p * (1 - p))[:, None]
    elif output != "logit":
        raise ValueError(f"unknown output {output!r}")
    return g[0] if single else g


def auroc(y, scores) -> float:
    """Mann-Whitney AUROC with average ranks for ties."""
    y = np.asarray(y).astype(int)
    n1 = int(y.sum())
    n0 = len(y) - n1
    if n1 == 0 or n0 == 0:
        raise SingleClassAuroc("AUROC undefined when only one class is present")
    r = rankdata(scores)
    return float((r[y == 1].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def evaluate(model, X, y, metric: str = ACCURACY) -> float:
    y = np.asarray(y)
    if len(y) < 1 or len(y) != np.shape(X)[0]:
        raise DimensionMismatch("X and Y must be non-empty and of equal length")
    return score_predictions(predict(model, X), y, metric)


def score_predictions(p, y, metric: str = ACCURACY) -> float:
    if metric == ACCURACY:
        return float(np.mean((p >= 0.5).astype(int) == y))
    if metric == AUROC:
        return auroc(y, p)
    raise ValueError(f"unknown metric {metric!r}")


@dataclass(frozen=True)
class TrainConfig:
    hidden_factor: float = 2.0
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    shuffle_labels: bool = False

    def __post_init__(self):
        if min(self.hidden_factor, self.learning_rate) <= 0 or min(self.batch_size, self.max_epochs, self.patience) < 1:
            raise ValueError("training hyperparameters must be positive")
        if self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")

    def hidden_units(self, d_enc: int) -> int:
        return max(16, int(round(self.hidden_factor * d_enc)))


def _bce(z, y):
    # numerically stable binary cross-entropy from logits
    return float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))


def train_mlp(X_train, y_train, X_val, y_val, cfg: TrainConfig = TrainConfig(), trace: dict | None = None) -> MlpModel:
    """Adam on binary cross-entropy; keeps the epoch with the best validation loss.

    ``trace``, when given, receives the per-epoch validation losses and the
    parameters of the last epoch run (as ``final``).
    """
    X_train = np.asarray(X_train, dtype=float)
    X_val = np.asarray(X_val, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    y_val = np.asarray(y_val, dtype=float)
    if X_train.shape[1] != X_val.shape[1]:
        raise SchemaMismatch("train and validation encodings differ in width")
    n, d = X_train.shape
    h = cfg.hidden_units(d)

    init = _rng.substream(cfg.seed, _rng.TRAIN_INIT)
    params = {
        "W1": init.standard_normal((h, d)) * np.sqrt(2.0 / d),
        "b1": np.zeros(h),
        "W2": np.zeros(h),
        "b2": np.zeros(1),
    }
    if cfg.shuffle_labels:
        y_train = _rng.substream(cfg.seed, _rng.TRAIN_SHUFFLE).permutation(y_train)
    # zero output layer plus log-odds bias: training starts from the base-rate
    # predictor, so a model that finds no signal stays close to it
    rate = np.clip(y_train.mean(), 1e-6, 1 - 1e-6)
    params["b2"][0] = np.log(rate / (1 - rate))

    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(v) for k, v in params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    batches = _rng.substream(cfg.seed, _rng.TRAIN_BATCHES)

    def val_loss(p):
        z = np.maximum(X_val @ p["W1"].T + p["b1"], 0) @ p["W2"] + p["b2"][0]
        return _bce(z, y_val)

    best_loss = val_loss(params)
    best = {k: a.copy() for k, a in params.items()}
    stale = 0
    for epoch in range(cfg.max_epochs):
        perm = batches.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            xb, yb = X_train[idx], y_train[idx]
            z1 = xb @ params["W1"].T + params["b1"]
            a1 = np.maximum(z1, 0)
            z2 = a1 @ params["W2"] + params["b2"][0]
            dz2 = (sigmoid(z2) - yb) / len(idx)
            da1 = np.outer(dz2, params["W2"]) * (z1 > 0)
            grads = {
                "W2": a1.T @ dz2,
                "b2": np.array([dz2.sum()]),
                "W1": da1.T @ xb,
                "b1": da1.sum(axis=0),
            }
            step += 1
            for k, g in grads.items():
                m[k] = beta1 * m[k] + (1 - beta1) * g
                v[k] = beta2 * v[k] + (1 - beta2) * g * g
                mhat = m[k] / (1 - beta1 ** step)
                vhat = v[k] / (1 - beta2 ** step)
                params[k] -= cfg.learning_rate * mhat / (np.sqrt(vhat) + eps)
        loss = val_loss(params)
        if trace is not None:
            trace.setdefault("val_loss", []).append(loss)
        if not np.isfinite(loss) or not all(np.isfinite(a).all() for a in params.values()):
            raise Divergence(f"non-finite loss at epoch {epoch}")
        if loss < best_loss - 1e-12:
            best_loss = loss
            best = {k: a.copy() for k, a in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                log.debug("early stop at epoch %d (best val loss %.4f)", epoch, best_loss)
                break
    if trace is not None:
        trace["final"] = MlpModel(params["W1"].copy(), params["b1"].copy(), params["W2"].copy(),
                                  float(params["b2"][0]))
        trace["best_val_loss"] = best_loss
    return MlpModel(best["W1"], best["b1"], best["W2"], float(best["b2"][0]))


def train_linear(X, y, max_iter: int = 20000, tol: float = 1e-6) -> LinearModel:
    """Logistic regression by accelerated gradient descent.

    Stops when the gradient norm drops below ``tol`` or after ``max_iter``
    iterations. Starts from zero, so directions the data cannot identify
    (e.g. one-hot groups vs intercept) stay at minimum norm.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] < 1:
        raise ValueError("empty training set")
    n = X.shape[0]
    A = np.hstack([X, np.ones((n, 1))])
    # Lipschitz constant of the mean logistic loss gradient
    L = np.linalg.eigvalsh(A.T @ A / n).max() / 4.0
    step = 1.0 / L
    theta = np.zeros(A.shape[1])
    prev = theta.copy()
    t = 1.0
    for it in range(max_iter):
        t_next = (1 + np.sqrt(1 + 4 * t * t)) / 2
        look = theta + ((t - 1) / t_next) * (theta - prev)
        grad = A.T @ (sigmoid(A @ look) - y) / n
        prev = theta
        theta = look - step * grad
        t = t_next
        if not np.isfinite(theta).all():
            raise Divergence("non-finite coefficients")
        if np.linalg.norm(A.T @ (sigmoid(A @ theta) - y) / n) < tol:
            break
    return LinearModel(theta[:-1], float(theta[-1]))


def save_model(model, path, schema_digest: str) -> None:
    """Versioned JSON checkpoint tagged with the dataset schema hash."""
    if isinstance(model, MlpModel):
        blob = {"kind": "mlp", "hidden": model.hidden, "activation": model.activation,
                "W1": model.W1.tolist(), "b1": model.b1.tolist(),
                "W2": model.W2.tolist(), "b2": model.b2}
    elif isinstance(model, LinearModel):
        blob = {"kind": "linear", "w": model.w.tolist(), "b": model.b}
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    blob.update(version=CHECKPOINT_VERSION, schema_hash=schema_digest)
    Path(path).write_text(json.dumps(blob))


def load_model(path, schema_digest: str):
    blob = json.loads(Path(path).read_text())
    if blob.get("version") != CHECKPOINT_VERSION:
        raise SchemaMismatch(f"unsupported checkpoint version {blob.get('version')}")
    if blob.get("schema_hash") != schema_digest:
        raise SchemaMismatch("checkpoint schema hash does not match the dataset")
    if blob["kind"] == "mlp":
        return MlpModel(np.array(blob["W1"]), np.array(blob["b1"]), np.array(blob["W2"]),
                        blob["b2"], blob.get("activation", "relu"))
    return LinearModel(np.array(blob["w"]), blob["b"])
