"""End-to-end preparation of one dataset and evaluation of one experiment cell."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .ablation import AblationResult, ExperimentConfig, random_explanation_curve, run_ablation
from .data import Dataset, augment_random_features, encode, split
from .distributions import TrainContext
from .explain import Ranking
from .metrics import AreaReport, GuardrailSet, area_between_random, horizontal_guardrail, quadrant3_area, vertical_guardrail
from .model import LinearModel, TrainConfig, train_linear, train_mlp


@dataclass
class Prepared:
    dataset: Dataset  # augmented
    train: Dataset
    val: Dataset
    test: Dataset
    context: TrainContext
    model: object
    worst_model: object

    def encoded(self, ds: Dataset) -> np.ndarray:
        return self.context.view.transform(ds.rows)


def prepare(ds: Dataset, *, random_features: int = 4, fractions=(0.6, 0.2, 0.2), seed: int = 0,
            train_cfg: TrainConfig | None = None, model_kind: str = "mlp", models=None) -> Prepared:
    """Augment with guardrail features, split, encode on train, fit the model
    under test and the shuffled-label worst-case model.

    ``models`` may carry an already trained (model, worst_model) pair, in
    which case nothing is fitted.
    """
    train_cfg = train_cfg or TrainConfig(seed=seed)
    aug = augment_random_features(ds, random_features, seed=seed)
    train, val, test = split(aug, fractions, seed=seed, stratified=True)
    ctx = TrainContext(train, encode(train))
    if models is not None:
        model, worst = models
        return Prepared(aug, train, val, test, ctx, model, worst)
    Xtr, Xva = ctx.matrix, ctx.view.transform(val.rows)
    if model_kind == "linear":
        model = train_linear(Xtr, train.labels)
    elif model_kind == "mlp":
        model = train_mlp(Xtr, train.labels, Xva, val.labels, train_cfg)
    else:
        raise ValueError(f"unknown model kind {model_kind!r}")
    worst = train_mlp(Xtr, train.labels, Xva, val.labels, replace(train_cfg, shuffle_labels=True))
    return Prepared(aug, train, val, test, ctx, model, worst)


def guardrails_for(result: AblationResult, horizontal: float, random_features, random_curve=None) -> GuardrailSet:
    mode = result.config.get("mode", "local")
    if not list(random_features):
        k_star = result.d  # no guardrail features: the line sits at the right edge
    else:
        stacked = Ranking(np.vstack([r.order for r in result.rankings]), mode)
        k_star = vertical_guardrail(stacked, random_features, mode)
    return GuardrailSet(horizontal, k_star, k_star / result.d,
                        None if random_curve is None else np.asarray(random_curve))


def attach_metrics(result: AblationResult, guardrails: GuardrailSet) -> AblationResult:
    result.guardrails = guardrails
    q3 = quadrant3_area(result.mean_curve, guardrails.horizontal, guardrails.vertical_fraction, result.fractions)
    between = (area_between_random(result.mean_curve, guardrails.random_curve, result.fractions)
               if guardrails.random_curve is not None else float("nan"))
    result.areas = AreaReport(q3, between)
    return result


def run_cell(prep: Prepared, cfg: ExperimentConfig, cache: dict | None = None,
             random_curves: dict | None = None, eval_data: Dataset | None = None) -> AblationResult:
    """Ablation plus guardrails and areas for one (method, baseline, perturbation, mode)."""
    eval_data = eval_data or prep.test
    if cfg.method == "linear_shap" and not isinstance(prep.model, LinearModel):
        raise ValueError("linear_shap requires a linear model")
    result = run_ablation(prep.model, eval_data, cfg, prep.context, cache=cache)
    rkey = (cfg.perturbation, cfg.trials, cfg.metric, cfg.seed)
    if random_curves is not None and rkey in random_curves:
        rand = random_curves[rkey]
    else:
        rand = random_explanation_curve(prep.model, eval_data, cfg.perturbation, prep.context,
                                        cfg.trials, cfg.metric, cfg.seed)
        if random_curves is not None:
            random_curves[rkey] = rand
    horizontal = horizontal_guardrail(prep.worst_model, prep.encoded(eval_data), eval_data.labels, cfg.metric)
    g = guardrails_for(result, horizontal, eval_data.random_features, rand.mean_curve)
    return attach_metrics(result, g)
