"""Guardrails, area measures, rank correlation and the baseline sample-size sweep."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import kendalltau

from . import _rng
from .distributions import TrainContext, build_baseline
from .errors import GridMismatch, LengthMismatch, NoRandomFeatures
from .explain import Ranking, explain, global_importance
from .model import ACCURACY, evaluate


@dataclass(frozen=True)
class GuardrailSet:
    horizontal: float
    vertical_rank: int
    vertical_fraction: float
    random_curve: np.ndarray | None = None

    def to_json(self) -> dict:
        return {
            "horizontal": self.horizontal,
            "vertical_rank": self.vertical_rank,
            "vertical_fraction": self.vertical_fraction,
            "random_curve": None if self.random_curve is None else np.asarray(self.random_curve).tolist(),
        }


@dataclass(frozen=True)
class AreaReport:
    quadrant3_area: float
    area_between_random: float
    note: str = "trial-mean curve, fraction-of-features axis, raw metric units"

    def to_json(self) -> dict:
        return {"quadrant3_area": self.quadrant3_area,
                "area_between_random": self.area_between_random, "note": self.note}


def horizontal_guardrail(worst_model, X_enc, y, metric: str = ACCURACY) -> float:
    """Capability of the shuffled-label model on the unperturbed data."""
    return evaluate(worst_model, X_enc, y, metric)


def vertical_guardrail(ranking: Ranking | np.ndarray, random_features, mode: str = "local") -> int:
    """1-based step of the best-ranked random feature.

    Local mode averages each random feature's ordinal rank over rows and
    floors the smallest mean; global mode reads the position directly from
    the single shared order. Several stacked orders (e.g. one global order
    per trial) are treated like local rows.
    """
    R = list(random_features)
    if not R:
        raise NoRandomFeatures("no random guardrail features")
    ordinal = ranking.ordinal if isinstance(ranking, Ranking) else np.atleast_2d(ranking)
    if mode == "global" and ordinal.shape[0] == 1:
        return int(ordinal[0, R].min())
    return int(np.floor(ordinal[:, R].mean(axis=0).min() + 1e-9))


def _positive_part_integral(x, y, upper):
    """Integral over [x[0], upper] of max(0, piecewise-linear y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if upper <= x[0]:
        return 0.0
    upper = min(upper, x[-1])
    keep = x < upper
    xs = np.append(x[keep], upper)
    ys = np.append(y[keep], np.interp(upper, x, y))
    total = 0.0
    for x0, x1, y0, y1 in zip(xs[:-1], xs[1:], ys[:-1], ys[1:]):
        w = x1 - x0
        if y0 >= 0 and y1 >= 0:
            total += w * (y0 + y1) / 2
        elif y0 > 0 or y1 > 0:
            top = max(y0, y1)
            total += w * top / (abs(y0) + abs(y1)) * top / 2  # triangle up to the crossing
    return total


def quadrant3_area(curve, horizontal: float, vertical_fraction: float, fractions=None) -> float:
    """Area between the horizontal guardrail and the curve where the curve
    dips below it, left of the vertical guardrail."""
    curve = np.asarray(curve, dtype=float)
    fractions = np.linspace(0, 1, curve.size) if fractions is None else np.asarray(fractions)
    if fractions.shape != curve.shape:
        raise GridMismatch("curve and fraction grid differ in length")
    return float(_positive_part_integral(fractions, horizontal - curve, vertical_fraction))


def area_between_random(curve, random_curve, fractions=None) -> float:
    """Signed trapezoid integral of ``random_curve - curve`` over [0, 1]."""
    curve = np.asarray(curve, dtype=float)
    random_curve = np.asarray(random_curve, dtype=float)
    if curve.shape != random_curve.shape:
        raise GridMismatch(f"grids differ: {curve.shape} vs {random_curve.shape}")
    fractions = np.linspace(0, 1, curve.size) if fractions is None else np.asarray(fractions)
    diff = random_curve - curve
    return float(np.sum((diff[1:] + diff[:-1]) / 2 * np.diff(fractions)))


def kendall_tau(a, b) -> float:
    """Kendall tau-b between two per-feature score (or rank) vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"lengths differ: {a.size} vs {b.size}")
    if a.size < 2:
        raise LengthMismatch("need at least two items")
    return float(kendalltau(a, b, variant="b").statistic)


@dataclass(frozen=True)
class SweepResult:
    sizes: list[int]
    taus: np.ndarray  # (repeats, len(sizes))

    @property
    def mean(self) -> np.ndarray:
        return self.taus.mean(axis=0)

    @property
    def std(self) -> np.ndarray:
        return self.taus.std(axis=0)

    def to_rows(self):
        return [{"size": s, "tau_mean": float(m), "tau_std": float(sd)}
                for s, m, sd in zip(self.sizes, self.mean, self.std)]


def sample_size_sweep(train: TrainContext, model, method: str, X_explain, sizes, seed: int = 0,
                      repeats: int = 5, **explain_opts) -> SweepResult:
    """Kendall tau of global rankings from subsampled training baselines
    against the ranking from the full training set.

    ``None`` (or any size >= the training size) in ``sizes`` means the full set.
    """
    n_train = train.data.n
    sizes = [n_train if s is None or s >= n_train else int(s) for s in sizes]
    groups = train.view.groups

    def importance(size, s):
        b = build_baseline("training", train, model, X_explain, sample_size=size, seed=s)
        return global_importance(explain(method, model, X_explain, b, groups, seed=s, **explain_opts))

    reference = importance(None, seed)
    taus = np.empty((repeats, len(sizes)))
    for r in range(repeats):
        for c, s in enumerate(sizes):
            # the full set involves no subsampling, so it is the reference itself
            imp = reference if s == n_train else importance(s, _rng.derive_seed(seed, r, s, _rng.SWEEP))
            taus[r, c] = kendall_tau(imp, reference)
    return SweepResult(sizes, taus)
