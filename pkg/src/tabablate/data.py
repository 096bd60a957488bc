"""Tabular datasets: schemas, CSV loading, synthesis, encoding and splits.

Rows are kept in *logical* space: one column per feature, numeric cells as
reals and categorical cells as integer category indices stored in a float
matrix. Models consume the one-hot/standardized *encoded* space produced
by :func:`encode`.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _rng
from .errors import (
    DegenerateSplit,
    EmptyFitSet,
    MissingColumn,
    NonBinaryLabel,
    ParseFailure,
    UnknownCategory,
)

log = logging.getLogger(__name__)

NUMERIC = "numeric"
CATEGORICAL = "categorical"
ORIGINAL = "original"
RANDOM_GUARDRAIL = "random_guardrail"


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str = NUMERIC
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))
        if self.kind == CATEGORICAL:
            if len(self.categories) < 2:
                raise ValueError(f"categorical feature {self.name!r} needs at least 2 categories")
            if len(set(self.categories)) != len(self.categories):
                raise ValueError(f"categorical feature {self.name!r} has duplicate categories")
        elif self.categories:
            raise ValueError(f"numeric feature {self.name!r} cannot declare categories")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    @property
    def width(self) -> int:
        """Number of encoded columns."""
        return len(self.categories) if self.is_categorical else 1

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.is_categorical:
            d["categories"] = list(self.categories)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        return cls(d["name"], d.get("kind", NUMERIC), tuple(d.get("categories", ())))


def numeric(name: str) -> FeatureSpec:
    return FeatureSpec(name, NUMERIC)


def categorical(name: str, categories: Sequence[str]) -> FeatureSpec:
    return FeatureSpec(name, CATEGORICAL, tuple(categories))


def check_schema(schema: Sequence[FeatureSpec]) -> tuple[FeatureSpec, ...]:
    schema = tuple(schema)
    names = [f.name for f in schema]
    if len(set(names)) != len(names):
        raise ValueError("feature names must be unique within a schema")
    return schema


def schema_hash(schema: Sequence[FeatureSpec]) -> str:
    blob = json.dumps([f.to_dict() for f in schema], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class Dataset:
    schema: tuple[FeatureSpec, ...]
    rows: np.ndarray
    labels: np.ndarray
    roles: tuple[str, ...] = ()
    name: str = "dataset"

    def __post_init__(self):
        schema = check_schema(self.schema)
        rows = np.asarray(self.rows, dtype=float)
        labels = np.asarray(self.labels).astype(int)
        if rows.ndim != 2 or rows.shape[1] != len(schema):
            raise ValueError(f"rows must be n x {len(schema)}, got {rows.shape}")
        if rows.shape[0] < 1:
            raise ValueError("dataset needs at least one row")
        if labels.shape != (rows.shape[0],):
            raise ValueError("labels must have one entry per row")
        if not np.isin(labels, (0, 1)).all():
            raise NonBinaryLabel("labels must be 0/1")
        for j, f in enumerate(schema):
            if f.is_categorical:
                col = rows[:, j]
                bad = (col != np.round(col)) | (col < 0) | (col >= len(f.categories))
                if bad.any():
                    i = int(np.flatnonzero(bad)[0])
                    raise UnknownCategory(i, f.name, col[i])
        roles = tuple(self.roles) or (ORIGINAL,) * len(schema)
        if len(roles) != len(schema) or not set(roles) <= {ORIGINAL, RANDOM_GUARDRAIL}:
            raise ValueError("roles must flag every feature as original or random_guardrail")
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "rows", _readonly(rows))
        object.__setattr__(self, "labels", _readonly(labels))
        object.__setattr__(self, "roles", roles)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return len(self.schema)

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.schema]

    @property
    def random_features(self) -> list[int]:
        return [j for j, r in enumerate(self.roles) if r == RANDOM_GUARDRAIL]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.schema, self.rows[idx], self.labels[idx], self.roles, self.name)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(schema_hash(self.schema).encode())
        h.update(",".join(self.roles).encode())
        h.update(np.ascontiguousarray(self.rows).tobytes())
        h.update(np.ascontiguousarray(self.labels.astype(np.int64)).tobytes())
        return h.hexdigest()[:16]

    def to_csv(self, path, label_column: str = "label") -> Path:
        """Write rows as CSV plus a ``<stem>.schema.json`` sidecar."""
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.feature_names + [label_column])
            for row, y in zip(self.rows, self.labels):
                cells = [
                    f.categories[int(v)] if f.is_categorical else repr(float(v))
                    for f, v in zip(self.schema, row)
                ]
                w.writerow(cells + [int(y)])
        sidecar = path.with_suffix(".schema.json")
        sidecar.write_text(json.dumps({
            "label_column": label_column,
            "features": [f.to_dict() for f in self.schema],
            "roles": list(self.roles),
        }, indent=2))
        return sidecar


def load_schema(path) -> tuple[list[FeatureSpec], str | None, list[str] | None]:
    blob = json.loads(Path(path).read_text())
    return ([FeatureSpec.from_dict(f) for f in blob["features"]],
            blob.get("label_column"), blob.get("roles"))


def load_csv(path, schema: Sequence[FeatureSpec], label_column: str, roles=None, name=None) -> Dataset:
    """Parse a headered CSV according to ``schema``; no type inference."""
    schema = check_schema(schema)
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseFailure(0, "empty file") from None
        index = {h.strip(): k for k, h in enumerate(header)}
        for needed in [f.name for f in schema] + [label_column]:
            if needed not in index:
                raise MissingColumn(f"column {needed!r} not in {path.name}")
        cat_lookup = [
            {c: k for k, c in enumerate(f.categories)} if f.is_categorical else None
            for f in schema
        ]
        rows, labels = [], []
        for i, rec in enumerate(reader):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ParseFailure(i, f"expected {len(header)} fields, got {len(rec)}")
            row = []
            for f, lookup in zip(schema, cat_lookup):
                cell = rec[index[f.name]].strip()
                if lookup is None:
                    try:
                        row.append(float(cell))
                    except ValueError:
                        raise ParseFailure(i, f"{f.name}: not a number: {cell!r}") from None
                else:
                    if cell not in lookup:
                        raise UnknownCategory(i, f.name, cell)
                    row.append(lookup[cell])
            raw = rec[index[label_column]].strip()
            try:
                y = float(raw)
            except ValueError:
                raise NonBinaryLabel(f"row {i}: label {raw!r} is not 0/1") from None
            if y not in (0.0, 1.0):
                raise NonBinaryLabel(f"row {i}: label {raw!r} is not 0/1")
            rows.append(row)
            labels.append(int(y))
    if not rows:
        raise ParseFailure(0, "no data rows")
    return Dataset(schema, np.array(rows, dtype=float), np.array(labels), roles or (), name or path.stem)


@dataclass(frozen=True)
class SyntheticSpec:
    n_continuous: int = 15
    n_categorical: int = 5
    n_levels: int = 6
    n_samples: int = 1000
    seed: int = 0

    def __post_init__(self):
        if min(self.n_continuous, self.n_categorical, self.n_levels) < 0:
            raise ValueError("counts must be >= 0")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.n_categorical and self.n_levels < 2:
            raise ValueError("categorical features need at least 2 levels")
        if self.n_continuous + self.n_categorical < 1:
            raise ValueError("need at least one feature")


@dataclass(frozen=True)
class GroundTruth:
    """Generating coefficients over the one-hot encoding (no intercept)."""

    coefficients: np.ndarray
    groups: tuple[tuple[int, int], ...]
    categorical: tuple[bool, ...]

    def feature_importance(self) -> np.ndarray:
        """Expected |Shapley value| per logical feature under the generator.

        With the expectation baseline a numeric N(0,1) feature contributes
        ``c_j (x_j - E x_j)`` so its mean magnitude is ``|c_j| sqrt(2/pi)``;
        a uniform categorical feature contributes ``c_a - mean(c)``.
        """
        c = self.coefficients
        out = []
        for (lo, hi), is_cat in zip(self.groups, self.categorical):
            if is_cat:
                g = c[lo:hi]
                out.append(np.abs(g - g.mean()).mean())
            else:
                out.append(abs(c[lo]) * np.sqrt(2 / np.pi))
        return np.array(out)


def synthesize(spec: SyntheticSpec = SyntheticSpec(), *, zero_coefficients: bool = False):
    """Logistic synthetic benchmark.

    Continuous features are N(0,1), categorical features uniform over
    ``n_levels`` levels; one N(0,1) coefficient per continuous feature and
    per category level; labels ~ Bernoulli(sigmoid(c . onehot(x))).
    """
    schema = [numeric(f"x{j}") for j in range(spec.n_continuous)]
    levels = tuple(f"c{k}" for k in range(spec.n_levels))
    schema += [categorical(f"cat{j}", levels) for j in range(spec.n_categorical)]

    groups, lo = [], 0
    for f in schema:
        groups.append((lo, lo + f.width))
        lo += f.width
    d_enc = lo

    coef = _rng.substream(spec.seed, _rng.SYNTH_COEF).standard_normal(d_enc)
    if zero_coefficients:
        coef = np.zeros(d_enc)

    frng = _rng.substream(spec.seed, _rng.SYNTH_FEATURES)
    n = spec.n_samples
    cont = frng.standard_normal((n, spec.n_continuous))
    cats = frng.integers(0, max(spec.n_levels, 1), size=(n, spec.n_categorical))
    rows = np.hstack([cont, cats.astype(float)])

    x_enc = np.zeros((n, d_enc))
    x_enc[:, : spec.n_continuous] = cont
    for j in range(spec.n_categorical):
        start = groups[spec.n_continuous + j][0]
        x_enc[np.arange(n), start + cats[:, j]] = 1.0
    p = 1.0 / (1.0 + np.exp(-(x_enc @ coef)))
    labels = (_rng.substream(spec.seed, _rng.SYNTH_LABELS).random(n) < p).astype(int)

    ds = Dataset(tuple(schema), rows, labels, name="synthetic")
    gt = GroundTruth(_readonly(coef), tuple(groups), tuple(f.is_categorical for f in schema))
    return ds, gt


def augment_random_features(ds: Dataset, count: int = 4, seed: int = 0) -> Dataset:
    """Append ``count`` i.i.d. N(0,1) guardrail features; ``count=0`` is identity."""
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return ds
    taken = set(ds.feature_names)
    names, k = [], 0
    while len(names) < count:
        name = f"random_{k}"
        if name not in taken:
            names.append(name)
        k += 1
    extra = _rng.substream(seed, _rng.AUGMENT).standard_normal((ds.n, count))
    return Dataset(
        ds.schema + tuple(numeric(nm) for nm in names),
        np.hstack([ds.rows, extra]),
        ds.labels,
        ds.roles + (RANDOM_GUARDRAIL,) * count,
        ds.name,
    )


@dataclass(frozen=True)
class EncodedView:
    """One-hot / standardized matrix plus everything needed to re-encode rows."""

    matrix: np.ndarray
    schema: tuple[FeatureSpec, ...]
    groups: tuple[tuple[int, int], ...]
    means: np.ndarray
    stds: np.ndarray
    constant_columns: tuple[str, ...] = field(default=())

    @property
    def d_enc(self) -> int:
        return self.groups[-1][1]

    @property
    def column_group(self) -> np.ndarray:
        """Logical feature index of every encoded column."""
        out = np.empty(self.d_enc, dtype=int)
        for j, (lo, hi) in enumerate(self.groups):
            out[lo:hi] = j
        return out

    def transform(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        out = np.zeros((rows.shape[0], self.d_enc))
        for j, (f, (lo, hi)) in enumerate(zip(self.schema, self.groups)):
            if f.is_categorical:
                out[np.arange(rows.shape[0]), lo + rows[:, j].astype(int)] = 1.0
            else:
                out[:, lo] = (rows[:, j] - self.means[j]) / self.stds[j]
        return out

    def encode_value(self, j: int, value: float) -> float:
        """Standardized column value for numeric feature ``j``."""
        return (value - self.means[j]) / self.stds[j]

    def decode(self, matrix: np.ndarray) -> np.ndarray:
        matrix = np.atleast_2d(matrix)
        out = np.empty((matrix.shape[0], len(self.schema)))
        for j, (f, (lo, hi)) in enumerate(zip(self.schema, self.groups)):
            if f.is_categorical:
                out[:, j] = np.argmax(matrix[:, lo:hi], axis=1)
            else:
                out[:, j] = matrix[:, lo] * self.stds[j] + self.means[j]
        return out

    def apply(self, ds: Dataset) -> "EncodedView":
        """Encode another dataset with this view's fitted statistics."""
        if ds.schema != self.schema:
            raise ValueError("schema differs from the fitted encoding")
        return EncodedView(_readonly(self.transform(ds.rows)), self.schema, self.groups,
                           self.means, self.stds, self.constant_columns)


def encode(ds: Dataset, fit_rows=None) -> EncodedView:
    """Standardize numeric columns and one-hot categoricals.

    Statistics come from ``fit_rows`` (all rows when None). Constant numeric
    columns get std 1 and are listed in ``constant_columns``.
    """
    fit_rows = np.arange(ds.n) if fit_rows is None else np.asarray(fit_rows, dtype=int)
    if fit_rows.size == 0:
        raise EmptyFitSet("fit_rows is empty")
    fit = ds.rows[fit_rows]
    means = np.zeros(ds.d)
    stds = np.ones(ds.d)
    groups, lo, constant = [], 0, []
    for j, f in enumerate(ds.schema):
        groups.append((lo, lo + f.width))
        lo += f.width
        if not f.is_categorical:
            means[j] = fit[:, j].mean()
            sd = fit[:, j].std()
            if sd > 0:
                stds[j] = sd
            else:
                constant.append(f.name)
    if constant:
        log.warning("constant numeric columns (std set to 1): %s", ", ".join(constant))
    view = EncodedView(np.empty((0, 0)), ds.schema, tuple(groups), _readonly(means),
                       _readonly(stds), tuple(constant))
    return EncodedView(_readonly(view.transform(ds.rows)), ds.schema, view.groups,
                       view.means, view.stds, view.constant_columns)


def _allocate(n: int, fractions) -> list[int]:
    # largest-remainder rounding, ties to the earlier split
    raw = np.asarray(fractions, dtype=float) * n
    counts = np.floor(raw + 1e-9).astype(int)
    rem = raw - counts
    for k in np.argsort(-rem, kind="stable")[: n - counts.sum()]:
        counts[k] += 1
    return counts.tolist()


def split(ds: Dataset, fractions=(0.6, 0.2, 0.2), seed: int = 0, stratified: bool = True):
    """Disjoint random split into len(fractions) datasets (train, val, test)."""
    fractions = tuple(float(f) for f in fractions)
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must be positive and sum to 1")
    rng = _rng.substream(seed, _rng.SPLIT)
    parts = [[] for _ in fractions]
    strata = [np.flatnonzero(ds.labels == c) for c in (0, 1)] if stratified else [np.arange(ds.n)]
    for idx in strata:
        idx = rng.permutation(idx)
        start = 0
        for part, c in zip(parts, _allocate(len(idx), fractions)):
            part.extend(idx[start:start + c].tolist())
            start += c
    if any(len(p) == 0 for p in parts):
        raise DegenerateSplit(f"split sizes {[len(p) for p in parts]} include an empty split")
    return tuple(ds.subset(np.sort(p)) for p in parts)


def stratified_subsample(ds: Dataset, fraction: float, seed: int = 0) -> Dataset:
    """Class-ratio preserving subsample of ``fraction`` of the rows."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    if fraction == 1:
        return ds
    return split(ds, (fraction, 1 - fraction), seed=seed, stratified=True)[0]
