"""Cumulative ablation curves, the random-order control and the theoretical decay."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import _rng
from .data import Dataset, GroundTruth
from .distributions import (
    PerturbationSampler,
    TrainContext,
    apply_replacements,
    baseline_kind,
    build_baseline,
    perturbation_kind,
)
from .explain import METHODS, Ranking, explain, rank
from .model import ACCURACY, AUROC, predict, score_predictions

LOCAL = "local"
GLOBAL = "global"
RANDOM = "random"


@dataclass(frozen=True)
class ExperimentConfig:
    method: str = "deep_shap"
    baseline: str = "training"
    perturbation: str = "constant_median"
    mode: str = GLOBAL
    trials: int = 3
    metric: str = ACCURACY
    baseline_sample_size: int = 50
    seed: int = 0
    k_neighbors: int = 5
    ig_steps: int = 64
    n_coalitions: int | None = None
    output: str = "probability"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        baseline_kind(self.baseline)
        perturbation_kind(self.perturbation)
        if self.mode not in (LOCAL, GLOBAL):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.metric not in (ACCURACY, AUROC):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.baseline_sample_size < 1 or self.k_neighbors < 1:
            raise ValueError("baseline_sample_size and k_neighbors must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    def explanation_key(self, trial: int) -> tuple:
        """Everything an explanation depends on (not perturbation or mode)."""
        return (self.method, self.baseline, self.baseline_sample_size, self.k_neighbors,
                self.ig_steps, self.n_coalitions, self.output, self.seed, trial)


@dataclass
class AblationResult:
    scores: np.ndarray  # (T, d + 1)
    config: dict
    feature_names: tuple[str, ...]
    rankings: list[Ranking] = field(default_factory=list)
    guardrails: object = None
    areas: object = None

    @property
    def d(self) -> int:
        return self.scores.shape[1] - 1

    @property
    def fractions(self) -> np.ndarray:
        return np.arange(self.d + 1) / self.d

    @property
    def mean_curve(self) -> np.ndarray:
        return self.scores.mean(axis=0)

    @property
    def std_curve(self) -> np.ndarray:
        return self.scores.std(axis=0)

    def mean_ordinals(self) -> np.ndarray:
        """(T, d) mean 1-based rank position of each feature per trial."""
        return np.array([r.ordinal.mean(axis=0) for r in self.rankings])

    def to_json(self) -> dict:
        out = {
            "config": self.config,
            "feature_names": list(self.feature_names),
            "fractions": self.fractions.tolist(),
            "scores": self.scores.tolist(),
            "mean_curve": self.mean_curve.tolist(),
            "std_curve": self.std_curve.tolist(),
            "mean_ordinals": self.mean_ordinals().tolist() if self.rankings else [],
        }
        if self.guardrails is not None:
            out["guardrails"] = self.guardrails.to_json()
        if self.areas is not None:
            out["areas"] = self.areas.to_json()
        return out

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "k", "fraction", "score"])
        for t, row in enumerate(self.scores):
            for k, s in enumerate(row):
                w.writerow([t, k, repr(float(self.fractions[k])), repr(float(s))])
        return buf.getvalue()


def _run_orders(model, X_logical, X_enc, labels, view, orders, replacements, metric, observer=None, trial=0):
    """Score curve for one trial: perturb orders[:, k-1] cumulatively."""
    n, d = orders.shape
    X = np.array(X_enc, copy=True)
    scores = np.empty(d + 1)
    scores[0] = score_predictions(predict(model, X), labels, metric)
    rows = np.arange(n)
    perturbed = np.zeros((n, d), dtype=bool) if observer is not None else None
    for k in range(1, d + 1):
        m = orders[:, k - 1]
        apply_replacements(view, X, rows, m, replacements[rows, m])
        scores[k] = score_predictions(predict(model, X), labels, metric)
        if observer is not None:
            perturbed[rows, m] = True
            observer(trial, k, perturbed.copy(), view.decode(X))
    return scores


def trial_attributions(model, eval_data: Dataset, cfg: ExperimentConfig, train: TrainContext,
                       trial: int, cache: dict | None = None):
    """Explanations for one trial (fresh baseline draw); memoized in ``cache``."""
    key = cfg.explanation_key(trial)
    if cache is not None and key in cache:
        return cache[key]
    X_enc = train.view.transform(eval_data.rows)
    bseed = _rng.derive_seed(cfg.seed, trial, _rng.BASELINE)
    baselines = build_baseline(cfg.baseline, train, model, X_enc, cfg.baseline_sample_size,
                               seed=bseed, k=cfg.k_neighbors)
    attrs = explain(cfg.method, model, X_enc, baselines, train.view.groups, eval_data.feature_names,
                    steps=cfg.ig_steps, n_coalitions=cfg.n_coalitions,
                    seed=_rng.derive_seed(cfg.seed, trial, _rng.EXPLAIN), output=cfg.output)
    if cache is not None:
        cache[key] = attrs
    return attrs


def _replacements(sampler, eval_data, seed, trial):
    # one draw per (sample, feature) per trial, reused for as long as the trial lasts
    return sampler.draw(eval_data.rows, _rng.substream(seed, trial, _rng.PERTURB))


def run_ablation(model, eval_data: Dataset, cfg: ExperimentConfig, train: TrainContext,
                 cache: dict | None = None, observer: Callable | None = None) -> AblationResult:
    """Ablate features in attribution order over ``cfg.trials`` trials.

    ``observer(trial, k, perturbed_mask, logical_rows)`` is called after
    every step when given (instrumentation for tests).
    """
    X_enc = train.view.transform(eval_data.rows)
    sampler = PerturbationSampler(cfg.perturbation, train.data)
    scores, rankings = [], []
    for t in range(cfg.trials):
        attrs = trial_attributions(model, eval_data, cfg, train, t, cache)
        ranking = rank(attrs, cfg.mode)
        rankings.append(ranking)
        orders = ranking.orders_for(eval_data.n)
        repl = _replacements(sampler, eval_data, cfg.seed, t)
        scores.append(_run_orders(model, eval_data.rows, X_enc, eval_data.labels, train.view, orders,
                                  repl, cfg.metric, observer, t))
    return AblationResult(np.array(scores), cfg.to_dict(), tuple(eval_data.feature_names), rankings)


def random_explanation_curve(model, eval_data: Dataset, perturbation: str, train: TrainContext,
                             trials: int = 3, metric: str = ACCURACY, seed: int = 0) -> AblationResult:
    """Same loop with an independent uniform random order per sample and trial."""
    perturbation = perturbation_kind(perturbation).value
    X_enc = train.view.transform(eval_data.rows)
    sampler = PerturbationSampler(perturbation, train.data)
    scores, rankings = [], []
    for t in range(trials):
        rng = _rng.substream(seed, t, _rng.RANDOM_ORDER)
        orders = np.array([rng.permutation(eval_data.d) for _ in range(eval_data.n)])
        rankings.append(Ranking(orders, LOCAL))
        repl = _replacements(sampler, eval_data, seed, t)
        scores.append(_run_orders(model, eval_data.rows, X_enc, eval_data.labels, train.view, orders,
                                  repl, metric, trial=t))
    config = {"method": RANDOM, "perturbation": perturbation, "mode": LOCAL, "trials": trials,
              "metric": metric, "seed": seed}
    return AblationResult(np.array(scores), config, tuple(eval_data.feature_names), rankings)


def theoretical_decay(gt: GroundTruth | np.ndarray) -> np.ndarray:
    """Share of total |coefficient| mass left after removing the k largest."""
    c = np.abs(gt.coefficients if isinstance(gt, GroundTruth) else np.asarray(gt, dtype=float))
    S = c.sum()
    if S == 0:
        return np.linspace(1.0, 0.0, c.size + 1)
    removed = np.concatenate([[0.0], np.cumsum(np.sort(c)[::-1])])
    curve = (S - removed) / S
    curve[-1] = 0.0
    return np.clip(curve, 0.0, 1.0)


def resample(curve, fractions, grid) -> np.ndarray:
    """Linear interpolation of a curve onto another fraction grid."""
    return np.interp(grid, fractions, curve)
