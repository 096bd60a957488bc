"""Declarative grid configuration (TOML), validation and hashing.

Example::

    schema_version = 1
    seed = 0
    out = "runs/demo"

    [[datasets]]
    name = "synthetic"
    kind = "synthetic"
    n_samples = 1000

    [model]
    kind = "mlp"

    [grid]
    methods = ["integrated_gradients", "kernel_shap", "deep_shap"]
    distributions = ["constant_median", "marginal", "max_distance",
                     "training", "opposite_class", "nearest_neighbors"]
    modes = ["local", "global"]
    trials = 3

``distributions`` is split into the baseline and perturbation axes by role;
explicit ``baselines`` / ``perturbations`` lists are checked against the
role table instead.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

try:  # Python >= 3.11
    import tomllib
except ImportError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .ablation import GLOBAL, LOCAL, ExperimentConfig
from .distributions import BaselineKind, PerturbationKind, baseline_kind, perturbation_kind
from .errors import ConfigError, ConfigRoleViolation
from .explain import LINEAR_SHAP, METHODS
from .model import ACCURACY, AUROC, TrainConfig

SCHEMA_VERSION = 1

_TOP_KEYS = {"schema_version", "seed", "out", "datasets", "model", "grid", "sweep"}
_DATASET_KEYS = {"name", "kind", "n_samples", "n_continuous", "n_categorical", "n_levels", "seed",
                 "path", "schema", "label"}
_MODEL_KEYS = {"kind"} | {f.name for f in fields(TrainConfig)} - {"seed", "shuffle_labels"}
_GRID_KEYS = {"methods", "baselines", "perturbations", "distributions", "modes", "trials", "metric",
              "baseline_sample_size", "k_neighbors", "ig_steps", "n_coalitions", "output",
              "random_features", "fractions"}
_SWEEP_KEYS = {"method", "sizes", "repeats"}


@dataclass(frozen=True)
class DatasetConfig:
    name: str
    kind: str = "synthetic"
    n_samples: int = 1000
    n_continuous: int = 15
    n_categorical: int = 5
    n_levels: int = 6
    seed: int | None = None  # synthetic generator seed, defaults to the run seed
    path: str | None = None
    schema: str | None = None
    label: str | None = None


@dataclass(frozen=True)
class GridConfig:
    datasets: tuple[DatasetConfig, ...]
    methods: tuple[str, ...] = ("integrated_gradients", "kernel_shap", "deep_shap")
    baselines: tuple[str, ...] = tuple(k.value for k in BaselineKind)
    perturbations: tuple[str, ...] = tuple(k.value for k in PerturbationKind)
    modes: tuple[str, ...] = (LOCAL, GLOBAL)
    trials: int = 3
    metric: str = ACCURACY
    baseline_sample_size: int = 50
    k_neighbors: int = 5
    ig_steps: int = 64
    n_coalitions: int | None = None
    output: str = "probability"
    random_features: int = 4
    fractions: tuple[float, ...] = (0.6, 0.2, 0.2)
    model: dict = field(default_factory=lambda: {"kind": "mlp"})
    sweep: dict = field(default_factory=lambda: {"method": "deep_shap", "sizes": [5, 10, 25, 50, 100, None],
                                                 "repeats": 5})
    seed: int = 0
    out: str = "runs/default"
    schema_version: int = SCHEMA_VERSION
    base_dir: str = "."  # directory relative paths are resolved against; not hashed

    @property
    def n_cells(self) -> int:
        return (len(self.datasets) * len(self.methods) * len(self.baselines)
                * len(self.perturbations) * len(self.modes))

    def train_config(self) -> TrainConfig:
        opts = {k: v for k, v in self.model.items() if k != "kind"}
        return TrainConfig(seed=self.seed, **opts)

    def experiment(self, method, baseline, perturbation, mode) -> ExperimentConfig:
        return ExperimentConfig(method=method, baseline=baseline, perturbation=perturbation, mode=mode,
                                trials=self.trials, metric=self.metric,
                                baseline_sample_size=self.baseline_sample_size, seed=self.seed,
                                k_neighbors=self.k_neighbors, ig_steps=self.ig_steps,
                                n_coalitions=self.n_coalitions, output=self.output)

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def out_dir(self) -> Path:
        return self.resolve(self.out)

    def canonical(self) -> dict:
        """Semantic content only: what the results depend on."""
        d = asdict(self)
        d.pop("base_dir")
        return d

    def hash(self) -> str:
        return canonical_hash(self.canonical())


def canonical_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _line_of(text: str, key: str, value=None) -> int | None:
    """Best-effort 1-based line of ``key = ...`` (or of ``value`` after it)."""
    lines = text.splitlines()
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for i, line in enumerate(lines):
        if pat.match(line):
            if value is None:
                return i + 1
            needle = json.dumps(value) if isinstance(value, str) else str(value)
            for k in range(i, len(lines)):
                if needle in lines[k]:
                    return k + 1
                if k > i and "=" in lines[k]:
                    break
            return i + 1
    return None


def _section_line(text: str, section: str) -> int | None:
    pat = re.compile(rf"^\s*\[\[?\s*{re.escape(section)}\s*\]\]?")
    for i, line in enumerate(text.splitlines()):
        if pat.match(line):
            return i + 1
    return None


def _check_keys(text, table: dict, allowed: set, where: str):
    for k in table:
        if k not in allowed:
            raise ConfigError(f"unknown key {k!r} in {where}", _line_of(text, k))


def _as_list(text, table, key, default):
    v = table.get(key, default)
    if isinstance(v, str) or not isinstance(v, (list, tuple)):
        raise ConfigError(f"{key} must be a list", _line_of(text, key))
    if not v:
        raise ConfigError(f"{key} must not be empty", _line_of(text, key))
    if len(set(map(str, v))) != len(v):
        raise ConfigError(f"{key} has duplicate entries", _line_of(text, key))
    return tuple(v)


def _role_axes(text, grid):
    """Baseline and perturbation axes after role filtering."""
    if "distributions" in grid:
        dists = _as_list(text, grid, "distributions", ())
        baselines, perturbations = [], []
        for name in dists:
            ok = False
            if name in BaselineKind._value2member_map_:
                baselines.append(name)
                ok = True
            if name in PerturbationKind._value2member_map_:
                perturbations.append(name)
                ok = True
            if not ok:
                raise ConfigError(f"unknown distribution {name!r}", _line_of(text, "distributions", name))
        baselines = tuple(grid.get("baselines", baselines))
        perturbations = tuple(grid.get("perturbations", perturbations))
    else:
        baselines = _as_list(text, grid, "baselines", [k.value for k in BaselineKind])
        perturbations = _as_list(text, grid, "perturbations", [k.value for k in PerturbationKind])
    for name in baselines:
        try:
            baseline_kind(name)
        except ConfigRoleViolation as e:
            raise ConfigRoleViolation(str(e), _line_of(text, "baselines", name)) from None
        except ValueError as e:
            raise ConfigError(str(e), _line_of(text, "baselines", name)) from None
    for name in perturbations:
        try:
            perturbation_kind(name)
        except ConfigRoleViolation as e:
            raise ConfigRoleViolation(str(e), _line_of(text, "perturbations", name)) from None
        except ValueError as e:
            raise ConfigError(str(e), _line_of(text, "perturbations", name)) from None
    if not baselines or not perturbations:
        raise ConfigError("grid needs at least one baseline and one perturbation", _section_line(text, "grid"))
    return tuple(baselines), tuple(perturbations)


def _int(text, table, key, default, lo=None):
    v = table.get(key, default)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{key} must be an integer", _line_of(text, key))
    if lo is not None and v < lo:
        raise ConfigError(f"{key} must be >= {lo}", _line_of(text, key))
    return v


def parse_config(text: str, base_dir=".", *, seed: int | None = None, out: str | None = None) -> GridConfig:
    """Parse and validate config text; ``seed``/``out`` override the file."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        m = re.search(r"line (\d+)", str(e))
        raise ConfigError(f"invalid TOML: {e}", int(m.group(1)) if m else None) from None
    _check_keys(text, raw, _TOP_KEYS, "top level")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})",
                          _line_of(text, "schema_version"))

    ds_tables = raw.get("datasets")
    if not isinstance(ds_tables, list) or not ds_tables:
        raise ConfigError("config needs at least one [[datasets]] table", _section_line(text, "datasets"))
    datasets = []
    for t in ds_tables:
        _check_keys(text, t, _DATASET_KEYS, "[[datasets]]")
        if "name" not in t:
            raise ConfigError("every dataset needs a name", _section_line(text, "datasets"))
        kind = t.get("kind", "synthetic")
        if kind not in ("synthetic", "csv"):
            raise ConfigError(f"unknown dataset kind {kind!r}", _line_of(text, "kind", kind))
        if kind == "csv":
            for k in ("path", "schema", "label"):
                if k not in t:
                    raise ConfigError(f"csv dataset {t['name']!r} needs {k!r}", _line_of(text, "name", t["name"]))
        for k in ("n_samples", "n_continuous", "n_categorical", "n_levels", "seed"):
            _int(text, t, k, 0, lo=0)
        datasets.append(DatasetConfig(**t))
    names = [d.name for d in datasets]
    if len(set(names)) != len(names):
        raise ConfigError("dataset names must be unique", _section_line(text, "datasets"))

    model = dict(raw.get("model", {"kind": "mlp"}))
    _check_keys(text, model, _MODEL_KEYS, "[model]")
    model.setdefault("kind", "mlp")
    if model["kind"] not in ("mlp", "linear"):
        raise ConfigError(f"unknown model kind {model['kind']!r}", _line_of(text, "kind", model["kind"]))

    grid = raw.get("grid", {})
    _check_keys(text, grid, _GRID_KEYS, "[grid]")
    methods = _as_list(text, grid, "methods", list(GridConfig.methods))
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}", _line_of(text, "methods", m))
        if m == LINEAR_SHAP and model["kind"] != "linear":
            raise ConfigError("linear_shap needs model kind 'linear'", _line_of(text, "methods", m))
    baselines, perturbations = _role_axes(text, grid)
    modes = _as_list(text, grid, "modes", [LOCAL, GLOBAL])
    for m in modes:
        if m not in (LOCAL, GLOBAL):
            raise ConfigError(f"unknown mode {m!r}", _line_of(text, "modes", m))
    metric = grid.get("metric", ACCURACY)
    if metric not in (ACCURACY, AUROC):
        raise ConfigError(f"unknown metric {metric!r}", _line_of(text, "metric"))
    output = grid.get("output", "probability")
    if output not in ("probability", "logit"):
        raise ConfigError(f"unknown output {output!r}", _line_of(text, "output"))

    sweep = {"method": "deep_shap", "sizes": [5, 10, 25, 50, 100, None], "repeats": 5}
    user_sweep = raw.get("sweep", {})
    _check_keys(text, user_sweep, _SWEEP_KEYS, "[sweep]")
    sweep.update(user_sweep)
    if sweep["method"] not in METHODS:
        raise ConfigError(f"unknown sweep method {sweep['method']!r}", _line_of(text, "method"))
    # TOML has no null: 0 (or any size >= the training size) stands for the full training set
    sweep["sizes"] = [None if s in (None, 0) else int(s) for s in sweep["sizes"]]

    run_seed = seed if seed is not None else _int(text, raw, "seed", 0, lo=0)
    out_dir = out if out is not None else raw.get("out", "runs/default")
    try:
        cfg = GridConfig(
            datasets=tuple(datasets), methods=methods, baselines=baselines, perturbations=perturbations,
            modes=modes, trials=_int(text, grid, "trials", 3, lo=1), metric=metric,
            baseline_sample_size=_int(text, grid, "baseline_sample_size", 50, lo=1),
            k_neighbors=_int(text, grid, "k_neighbors", 5, lo=1),
            ig_steps=_int(text, grid, "ig_steps", 64, lo=1),
            n_coalitions=_int(text, grid, "n_coalitions", None, lo=1), output=output,
            random_features=_int(text, grid, "random_features", 4, lo=0),
            fractions=tuple(float(f) for f in grid.get("fractions", (0.6, 0.2, 0.2))),
            model=model, sweep=sweep, seed=run_seed, out=str(out_dir), schema_version=version,
            base_dir=str(base_dir))
        cfg.train_config()
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    if len(cfg.fractions) != 3:
        raise ConfigError("fractions must list train, validation and test shares", _line_of(text, "fractions"))
    return cfg


def load_config(path, *, seed: int | None = None, out: str | None = None) -> GridConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(text, path.parent, seed=seed, out=out)
