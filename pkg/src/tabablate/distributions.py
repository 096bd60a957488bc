"""Baseline sets for explainers and perturbation samplers for ablation.

Role restrictions:

=================  ============  ========
distribution       perturbation  baseline
=================  ============  ========
constant_median    yes           yes
marginal           yes
max_distance       yes
training                         yes
opposite_class                   yes
nearest_neighbors                yes
=================  ============  ========
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _rng
from .data import Dataset, EncodedView
from .errors import ConfigRoleViolation, EmptyTrain, NoOppositeClassRows, SingleCategoryFeature
from .model import predict


class BaselineKind(str, Enum):
    CONSTANT_MEDIAN = "constant_median"
    TRAINING = "training"
    OPPOSITE_CLASS = "opposite_class"
    NEAREST_NEIGHBORS = "nearest_neighbors"


class PerturbationKind(str, Enum):
    CONSTANT_MEDIAN = "constant_median"
    MARGINAL = "marginal"
    MAX_DISTANCE = "max_distance"


def baseline_kind(name) -> BaselineKind:
    try:
        return BaselineKind(name)
    except ValueError:
        if name in PerturbationKind._value2member_map_:
            raise ConfigRoleViolation(f"{name!r} is a perturbation, not a baseline") from None
        raise ValueError(f"unknown baseline {name!r}") from None


def perturbation_kind(name) -> PerturbationKind:
    try:
        return PerturbationKind(name)
    except ValueError:
        if name in BaselineKind._value2member_map_:
            raise ConfigRoleViolation(f"{name!r} is a baseline, not a perturbation") from None
        raise ValueError(f"unknown perturbation {name!r}") from None


@dataclass(frozen=True)
class TrainContext:
    """Training data together with the encoding fitted on it."""

    data: Dataset
    view: EncodedView

    @classmethod
    def from_dataset(cls, train: Dataset) -> "TrainContext":
        from .data import encode
        return cls(train, encode(train))

    @property
    def matrix(self) -> np.ndarray:
        return self.view.matrix


def _medians(train: Dataset) -> np.ndarray:
    """Numeric medians and categorical modes (ties to the lowest index)."""
    out = np.empty(train.d)
    for j, f in enumerate(train.schema):
        col = train.rows[:, j]
        if f.is_categorical:
            out[j] = np.argmax(np.bincount(col.astype(int), minlength=len(f.categories)))
        else:
            out[j] = np.median(col)
    return out


@dataclass(frozen=True)
class BaselineSet:
    """Reference rows in encoded space, one set per explained sample.

    ``rows`` has shape (n_explain, m, d_enc), or (1, m, d_enc) when the set
    is shared by every sample.
    """

    rows: np.ndarray
    kind: BaselineKind
    sample_size: int

    @property
    def shared(self) -> bool:
        return self.rows.shape[0] == 1

    def for_sample(self, i: int) -> np.ndarray:
        return self.rows[0 if self.shared else i]


def build_baseline(kind, train: TrainContext, model, X_explain, sample_size: int | None = 50,
                   seed: int = 0, k: int = 5) -> BaselineSet:
    """Reference distribution for each row of ``X_explain``.

    ``sample_size=None`` uses the whole training matrix (training and
    opposite_class kinds).
    """
    kind = baseline_kind(kind)
    T = train.matrix
    if T.shape[0] == 0:
        raise EmptyTrain("training set is empty")
    X_explain = np.atleast_2d(X_explain)
    n_train = T.shape[0]
    rng = _rng.substream(seed, _rng.BASELINE)

    if kind is BaselineKind.CONSTANT_MEDIAN:
        row = train.view.transform(_medians(train.data)[None, :])
        return BaselineSet(row[None, :, :], kind, 1)

    if kind is BaselineKind.TRAINING:
        if sample_size is None or sample_size == n_train:
            idx = np.arange(n_train)
        else:
            idx = rng.choice(n_train, size=sample_size, replace=sample_size > n_train)
        return BaselineSet(T[idx][None, :, :], kind, len(idx))

    if kind is BaselineKind.OPPOSITE_CLASS:
        labels = train.data.labels
        predicted = (predict(model, X_explain) >= 0.5).astype(int)
        by_class = {c: np.flatnonzero(labels == c) for c in (0, 1)}
        for c in set(predicted.tolist()):
            if by_class[1 - c].size == 0:
                raise NoOppositeClassRows(f"no training rows with label {1 - c}")
        size = sample_size if sample_size is not None else None
        sets = []
        for i, c in enumerate(predicted):
            pool = by_class[1 - c]
            if size is None:
                sets.append(T[pool])
                continue
            srng = _rng.substream(seed, _rng.BASELINE, i)
            sets.append(T[srng.choice(pool, size=size, replace=size > pool.size)])
        if size is None:
            # unequal pool sizes: pad by cycling so the array stays rectangular
            m = max(len(s) for s in sets)
            sets = [s[np.arange(m) % len(s)] for s in sets]
        return BaselineSet(np.stack(sets), kind, sets[0].shape[0])

    # nearest neighbors, L2 in standardized encoded space, ties by row index
    if k < 1:
        raise ValueError("k must be >= 1")
    k_eff = min(k, n_train)
    sq_t = (T * T).sum(axis=1)
    out = np.empty((X_explain.shape[0], k_eff, T.shape[1]))
    for start in range(0, X_explain.shape[0], 256):
        xb = X_explain[start:start + 256]
        d2 = (xb * xb).sum(axis=1)[:, None] + sq_t[None, :] - 2 * xb @ T.T
        d2 = np.maximum(np.round(d2, 10), 0.0)
        nn = np.argsort(d2, axis=1, kind="stable")[:, :k_eff]
        out[start:start + len(xb)] = T[nn]
    return BaselineSet(out, kind, k_eff)


class PerturbationSampler:
    """Replacement values for logical cells, fitted on training data."""

    def __init__(self, kind, train: Dataset, seed: int = 0):
        self.kind = perturbation_kind(kind)
        self.schema = train.schema
        self.medians = _medians(train)
        self.pools = [train.rows[:, j].copy() for j in range(train.d)]
        self.mins = train.rows.min(axis=0)
        self.maxs = train.rows.max(axis=0)
        # categories actually present in training, for max_distance closure
        self.observed = [
            np.unique(train.rows[:, j]).astype(int) if f.is_categorical else None
            for j, f in enumerate(train.schema)
        ]
        self.rng = _rng.substream(seed, _rng.PERTURB)

    def perturb(self, x_logical, j: int, rng=None) -> float:
        """Replacement for cell ``j`` of one logical row."""
        rng = self.rng if rng is None else rng
        return float(self._draw_column(np.asarray([x_logical[j]], dtype=float), j, rng)[0])

    def draw(self, X_logical, rng=None) -> np.ndarray:
        """Replacement for every cell of ``X_logical``, drawn column by column."""
        rng = self.rng if rng is None else rng
        X_logical = np.atleast_2d(X_logical)
        out = np.empty_like(X_logical, dtype=float)
        for j in range(X_logical.shape[1]):
            out[:, j] = self._draw_column(X_logical[:, j], j, rng)
        return out

    def _draw_column(self, current, j, rng):
        n = current.shape[0]
        f = self.schema[j]
        if self.kind is PerturbationKind.CONSTANT_MEDIAN:
            return np.full(n, self.medians[j])
        if self.kind is PerturbationKind.MARGINAL:
            pool = self.pools[j]
            return pool[rng.integers(0, pool.size, size=n)]
        if not f.is_categorical:
            lo, hi = self.mins[j], self.maxs[j]
            return np.where(np.abs(hi - current) >= np.abs(current - lo), hi, lo)
        # uniform over the other observed categories
        cats = self.observed[j]
        out = np.empty(n)
        for idx, a in enumerate(current.astype(int)):
            choices = cats[cats != a]
            if choices.size == 0:
                raise SingleCategoryFeature(f"feature {f.name!r} has no other category to move to")
            out[idx] = choices[rng.integers(0, choices.size)]
        return out


def perturb_row_in_encoded(view: EncodedView, row_enc, j: int, replacement: float) -> np.ndarray:
    """Copy of ``row_enc`` with logical feature ``j`` set to ``replacement``."""
    out = np.array(row_enc, dtype=float, copy=True)
    apply_replacements(view, out[None, :], np.array([0]), np.array([j]), np.array([replacement]))
    return out


def apply_replacements(view: EncodedView, X_enc, rows, features, values) -> None:
    """In-place: for each t set logical feature ``features[t]`` of row ``rows[t]``."""
    rows = np.asarray(rows, dtype=int)
    features = np.asarray(features, dtype=int)
    values = np.asarray(values, dtype=float)
    for j in np.unique(features):
        sel = features == j
        r = rows[sel]
        lo, hi = view.groups[j]
        if view.schema[j].is_categorical:
            X_enc[r, lo:hi] = 0.0
            X_enc[r, lo + values[sel].astype(int)] = 1.0
        else:
            X_enc[r, lo] = view.encode_value(j, values[sel])
