"""Local attributions, categorical aggregation and feature rankings.

All explainers take one encoded sample ``x`` and a matrix of baseline rows
and return the mean attribution over those baselines. ``output`` selects
whether the probability (default) or the logit is explained.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np

from . import _rng
from .distributions import BaselineSet
from .errors import SingularSystem, UnsupportedModel
from .model import LinearModel, MlpModel, input_gradient, logit, predict, sigmoid

INTEGRATED_GRADIENTS = "integrated_gradients"
KERNEL_SHAP = "kernel_shap"
DEEP_SHAP = "deep_shap"
LINEAR_SHAP = "linear_shap"
METHODS = (INTEGRATED_GRADIENTS, KERNEL_SHAP, DEEP_SHAP, LINEAR_SHAP)

EXACT_MAX_FEATURES = 12
DEFAULT_COALITIONS = 2048


def _f(model, X, output):
    return predict(model, X) if output == "probability" else logit(model, X)


def integrated_gradients(model, x, baselines, steps: int = 64, output: str = "probability") -> np.ndarray:
    """Midpoint-rule path integral from each baseline to ``x``, averaged."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    x = np.asarray(x, dtype=float)
    B = np.atleast_2d(baselines)
    t = (np.arange(steps) + 0.5) / steps
    diff = x[None, :] - B  # (m, d)
    points = B[:, None, :] + t[None, :, None] * diff[:, None, :]  # (m, steps, d)
    g = input_gradient(model, points.reshape(-1, x.size), output=output)
    mean_g = g.reshape(B.shape[0], steps, x.size).mean(axis=1)
    return (diff * mean_g).mean(axis=0)


def deep_shap(model, x, baselines, output: str = "probability") -> np.ndarray:
    """DeepLIFT rescale rule per baseline, averaged over baselines.

    Exactly complete per baseline: attributions sum to f(x) - f(b).
    """
    x = np.asarray(x, dtype=float)
    B = np.atleast_2d(baselines)
    diff = x[None, :] - B
    if isinstance(model, MlpModel):
        z = model.preactivation(x)
        zb = model.preactivation(B)  # (m, h)
        dz = z[None, :] - zb
        if model.activation == "identity":
            mult = np.ones_like(dz)
        else:
            a, ab = np.maximum(z, 0)[None, :], np.maximum(zb, 0)
            small = np.abs(dz) < 1e-7
            deriv = np.broadcast_to((z > 0).astype(float), dz.shape)
            mult = np.where(small, deriv, (a - ab) / np.where(small, 1.0, dz))
        # per-baseline effective input weights on the logit
        w_eff = (mult * model.W2[None, :]) @ model.W1  # (m, d)
    elif isinstance(model, LinearModel):
        w_eff = np.broadcast_to(model.w, diff.shape)
    else:
        raise UnsupportedModel(f"deep_shap needs an MlpModel or LinearModel, got {type(model).__name__}")
    contrib = diff * w_eff
    if output == "probability":
        o = model.logit(x[None, :])[0]
        ob = model.logit(B)
        do = o - ob
        small = np.abs(do) < 1e-7
        s = sigmoid(np.array([o]))[0]
        sb = sigmoid(ob)
        scale = np.where(small, s * (1 - s), (s - sb) / np.where(small, 1.0, do))
        contrib = contrib * scale[:, None]
    elif output != "logit":
        raise ValueError(f"unknown output {output!r}")
    return contrib.mean(axis=0)


def linear_shap(model: LinearModel, x, baselines, groups) -> np.ndarray:
    """Closed-form interventional Shapley values of a linear model's logit."""
    if not isinstance(model, LinearModel):
        raise UnsupportedModel("linear_shap needs a LinearModel")
    diff = np.asarray(x, dtype=float)[None, :] - np.atleast_2d(baselines)
    return aggregate_categorical((diff * model.w).mean(axis=0), groups)


def shapley_kernel_weight(M: int, s: int) -> float:
    return (M - 1) / (comb(M, s) * s * (M - s))


def _exact_coalitions(M):
    masks, weights = [], []
    for s in range(1, M):
        w = shapley_kernel_weight(M, s)
        for c in combinations(range(M), s):
            m = np.zeros(M, dtype=bool)
            m[list(c)] = True
            masks.append(m)
            weights.append(w)
    return np.array(masks), np.array(weights)


def _sampled_coalitions(M, budget, rng):
    """Enumerate whole size classes from the extremes inward while the budget
    covers them; fill the rest with paired samples drawn by kernel mass."""
    sizes = np.arange(1, M)
    mass = np.array([(M - 1) / (s * (M - s)) for s in sizes])
    mass /= mass.sum()
    masks, weights = [], []
    remaining = budget
    left = 1.0
    lo, hi = 1, M - 1
    while lo <= hi:
        pair = [lo] if lo == hi else [lo, hi]
        count = sum(comb(M, s) for s in pair)
        class_mass = sum(mass[s - 1] for s in pair)
        if count > remaining or remaining * class_mass / left < count - 1e-8:
            break
        for s in pair:
            w = mass[s - 1] / comb(M, s)
            for c in combinations(range(M), s):
                m = np.zeros(M, dtype=bool)
                m[list(c)] = True
                masks.append(m)
                weights.append(w)
        remaining -= count
        left -= class_mass
        lo, hi = lo + 1, hi - 1
    if lo <= hi and remaining >= 2:
        todo = np.arange(lo, hi + 1)
        p = mass[todo - 1] / mass[todo - 1].sum()
        found = {}
        n_pairs = remaining // 2
        for _ in range(n_pairs):
            s = int(rng.choice(todo, p=p))
            m = np.zeros(M, dtype=bool)
            m[rng.choice(M, size=s, replace=False)] = True
            for mm in (m, ~m):
                key = mm.tobytes()
                found[key] = found.get(key, 0) + 1
        total = sum(found.values())
        for key in sorted(found):
            masks.append(np.frombuffer(key, dtype=bool).copy())
            weights.append(left * found[key] / total)
    return np.array(masks).reshape(-1, M), np.array(weights)


def coalition_values(model, x, baselines, column_group, masks, output="probability", chunk=None):
    """mean_b f(x on coalition, b elsewhere) for every coalition mask."""
    B = np.atleast_2d(baselines)
    colmask = masks[:, column_group]  # (C, d_enc)
    chunk = chunk or max(1, 200_000 // max(1, B.shape[0] * B.shape[1]))
    out = np.empty(masks.shape[0])
    for start in range(0, masks.shape[0], chunk):
        cm = colmask[start:start + chunk]
        X = np.where(cm[:, None, :], x[None, None, :], B[None, :, :])
        out[start:start + chunk] = _f(model, X, output).mean(axis=1)
    return out


def kernel_shap(model, x, baselines, groups, n_coalitions: int | None = None, exact: bool | None = None,
                rng=None, output: str = "probability") -> np.ndarray:
    """Kernel SHAP over logical features; categorical groups toggle together.

    Solves the Shapley-kernel weighted least squares problem subject to
    sum(phi) = f(x) - mean_b f(b). Exact enumeration by default when the
    feature count is at most 12.
    """
    x = np.asarray(x, dtype=float)
    B = np.atleast_2d(baselines)
    M = len(groups)
    column_group = np.empty(x.size, dtype=int)
    for j, (lo, hi) in enumerate(groups):
        column_group[lo:hi] = j
    fx = _f(model, x[None, :], output)[0]
    f0 = _f(model, B, output).mean()
    total = fx - f0
    if M == 1:
        return np.array([total])
    if exact is None:
        exact = M <= EXACT_MAX_FEATURES
    if exact:
        masks, weights = _exact_coalitions(M)
    else:
        budget = min(2 ** M - 2, n_coalitions or DEFAULT_COALITIONS)
        if budget < M + 2 and 2 ** M - 2 > budget:
            raise ValueError("n_coalitions must be at least d + 2")
        masks, weights = _sampled_coalitions(M, budget, rng if rng is not None else np.random.default_rng(0))
    y = coalition_values(model, x, B, column_group, masks, output) - f0
    Z = masks.astype(float)
    # eliminate the last feature through the efficiency constraint
    A = Z[:, :-1] - Z[:, [-1]]
    r = y - Z[:, -1] * total
    sw = np.sqrt(weights)
    Aw = A * sw[:, None]
    rw = r * sw
    sol, _, rank, _ = np.linalg.lstsq(Aw, rw, rcond=None)
    if rank < M - 1:
        warnings.warn("kernel SHAP system is rank deficient; adding a small ridge", SingularSystem)
        G = Aw.T @ Aw + 1e-8 * np.eye(M - 1)
        sol = np.linalg.solve(G, Aw.T @ rw)
    return np.append(sol, total - sol.sum())


def aggregate_categorical(encoded_attr, groups) -> np.ndarray:
    """Sum encoded attributions within each logical feature's column group."""
    a = np.asarray(encoded_attr, dtype=float)
    starts = [lo for lo, _ in groups]
    return np.add.reduceat(a, starts, axis=-1)


@dataclass(frozen=True)
class AttributionSet:
    values: np.ndarray  # (n, d) logical attributions
    method: str
    baseline: str
    encoded_values: np.ndarray | None = None
    feature_names: tuple[str, ...] = ()

    def to_csv(self, path) -> None:
        header = ",".join(self.feature_names or [f"f{j}" for j in range(self.values.shape[1])])
        np.savetxt(path, self.values, delimiter=",", header=header, comments="", fmt="%.17g")


def explain(method: str, model, X_enc, baselines: BaselineSet, groups, feature_names=(), *,
            steps: int = 64, n_coalitions: int | None = None, seed: int = 0,
            output: str = "probability", target: str = "predicted") -> AttributionSet:
    """Attribute every row of ``X_enc`` with one method and baseline set.

    With ``target="predicted"`` each row's attributions are signed towards
    its predicted class (negated where the model predicts 0), so that a
    decreasing sort puts the evidence for the prediction first.
    ``target="positive"`` always explains class 1.
    """
    X_enc = np.atleast_2d(X_enc)
    n, d_enc = X_enc.shape
    values = np.empty((n, len(groups)))
    encoded = None if method in (KERNEL_SHAP, LINEAR_SHAP) else np.empty((n, d_enc))
    for i in range(n):
        x, B = X_enc[i], baselines.for_sample(i)
        if method == INTEGRATED_GRADIENTS:
            encoded[i] = integrated_gradients(model, x, B, steps=steps, output=output)
        elif method == DEEP_SHAP:
            encoded[i] = deep_shap(model, x, B, output=output)
        elif method == KERNEL_SHAP:
            values[i] = kernel_shap(model, x, B, groups, n_coalitions=n_coalitions,
                                    rng=_rng.substream(seed, _rng.EXPLAIN, i), output=output)
        elif method == LINEAR_SHAP:
            values[i] = linear_shap(model, x, B, groups)
        else:
            raise ValueError(f"unknown method {method!r}")
    if encoded is not None:
        values = aggregate_categorical(encoded, groups)
    if target == "predicted":
        sign = np.where(predict(model, X_enc) >= 0.5, 1.0, -1.0)
        values = values * sign[:, None]
        if encoded is not None:
            encoded = encoded * sign[:, None]
    elif target != "positive":
        raise ValueError(f"unknown target {target!r}")
    return AttributionSet(values, method, baselines.kind.value, encoded, tuple(feature_names))


def global_importance(values) -> np.ndarray:
    """Mean absolute attribution per feature."""
    v = values.values if isinstance(values, AttributionSet) else np.asarray(values)
    return np.abs(np.atleast_2d(v)).mean(axis=0)


@dataclass(frozen=True)
class Ranking:
    """Feature orderings by decreasing importance.

    ``order[i, k]`` is the 0-based index of the feature ranked ``k+1``-th for
    sample ``i`` (a single row in global mode); ``ordinal[i, j]`` is the
    1-based rank position of feature ``j``.
    """

    order: np.ndarray
    mode: str = "local"

    @property
    def ordinal(self) -> np.ndarray:
        out = np.empty_like(self.order)
        rows = np.arange(self.order.shape[0])[:, None]
        out[rows, self.order] = np.arange(1, self.order.shape[1] + 1)[None, :]
        return out

    def orders_for(self, n: int) -> np.ndarray:
        return np.broadcast_to(self.order, (n, self.order.shape[1])) if self.order.shape[0] == 1 else self.order


def rank(values, mode: str = "local") -> Ranking:
    """Descending argsort, ties by feature index. Global mode ranks by
    :func:`global_importance` when given a per-sample matrix."""
    v = values.values if isinstance(values, AttributionSet) else np.asarray(values, dtype=float)
    if not np.isfinite(v).all():
        raise ValueError("attributions must be finite")
    if mode == "global":
        v = global_importance(v) if v.ndim == 2 else v
        return Ranking(np.argsort(-v, kind="stable")[None, :], "global")
    if mode != "local":
        raise ValueError(f"unknown mode {mode!r}")
    return Ranking(np.argsort(-np.atleast_2d(v), axis=1, kind="stable"), "local")
