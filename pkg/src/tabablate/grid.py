"""Experiment grids: enumeration, cached execution, manifest and reports.

Artifacts live under the run directory::

    manifest.json
    models/<fingerprint>-<model key>.json         model under test
    models/<fingerprint>-<model key>.worst.json   shuffled-label model
    cells/<cell id>/result.json, curve.csv
    tables/*.csv
    plots/*.svg

Only the parent process writes files (single writer); workers return
serialized results.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from itertools import product
from pathlib import Path

import numpy as np

from . import __version__
from .ablation import GLOBAL, LOCAL
from .config import GridConfig, canonical_hash
from .data import Dataset, SyntheticSpec, load_csv, load_schema, schema_hash, synthesize
from .errors import IncompleteGrid
from .metrics import sample_size_sweep
from .model import load_model, save_model
from .pipeline import Prepared, prepare, run_cell
from .plot import Curve, PlotSpec, render_plot

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
OK = "ok"
FAILED = "failed"


@dataclass(frozen=True)
class Cell:
    dataset: str
    method: str
    baseline: str
    perturbation: str
    mode: str

    @property
    def id(self) -> str:
        return "__".join((self.dataset, self.method, self.baseline, self.perturbation, self.mode))

    @property
    def group(self) -> tuple:
        # cells in one group share explanations and random-order curves
        return (self.dataset, self.method, self.baseline)


def enumerate_cells(cfg: GridConfig) -> list[Cell]:
    return [Cell(d.name, m, b, p, mode) for d, m, b, p, mode in
            product(cfg.datasets, cfg.methods, cfg.baselines, cfg.perturbations, cfg.modes)]


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write(path: Path, text: str) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------- datasets / models

def load_dataset(cfg: GridConfig, name: str) -> Dataset:
    dc = next(d for d in cfg.datasets if d.name == name)
    if dc.kind == "synthetic":
        spec = SyntheticSpec(dc.n_continuous, dc.n_categorical, dc.n_levels, dc.n_samples,
                             cfg.seed if dc.seed is None else dc.seed)
        ds, _ = synthesize(spec)
        return Dataset(ds.schema, ds.rows, ds.labels, ds.roles, name)
    schema, _, roles = load_schema(cfg.resolve(dc.schema))
    return load_csv(cfg.resolve(dc.path), schema, dc.label, roles=roles, name=name)


def model_key(cfg: GridConfig) -> str:
    blob = {"model": cfg.model, "seed": cfg.seed, "random_features": cfg.random_features,
            "fractions": cfg.fractions, "train": asdict(cfg.train_config())}
    return canonical_hash(blob)[:12]


def _model_paths(cfg: GridConfig, fingerprint: str) -> tuple[str, str]:
    stem = f"models/{fingerprint}-{model_key(cfg)}"
    return stem + ".json", stem + ".worst.json"


def prepared_for(cfg: GridConfig, name: str, *, force: bool = False, train: bool = True):
    """Prepared dataset with models loaded from the run cache or trained.

    Returns ``(prepared, model_files)`` where ``model_files`` maps the
    relative checkpoint paths to their sha256 when freshly written.
    """
    ds = load_dataset(cfg, name)
    out = cfg.out_dir
    mpath, wpath = _model_paths(cfg, ds.fingerprint())
    base = prepare(ds, random_features=cfg.random_features, fractions=cfg.fractions, seed=cfg.seed,
                   train_cfg=cfg.train_config(), model_kind=cfg.model["kind"], models=(None, None))
    digest = schema_hash(base.dataset.schema)
    if not force and (out / mpath).exists() and (out / wpath).exists():
        models = (load_model(out / mpath, digest), load_model(out / wpath, digest))
        return Prepared(base.dataset, base.train, base.val, base.test, base.context, *models), {}
    if not train:
        raise FileNotFoundError(f"no cached model for dataset {name!r}")
    fitted = prepare(ds, random_features=cfg.random_features, fractions=cfg.fractions, seed=cfg.seed,
                     train_cfg=cfg.train_config(), model_kind=cfg.model["kind"])
    files = {}
    for rel, m in ((mpath, fitted.model), (wpath, fitted.worst_model)):
        (out / rel).parent.mkdir(parents=True, exist_ok=True)
        save_model(m, out / rel, digest)
        files[rel] = _sha256(out / rel)
    # reload so every consumer sees exactly the checkpointed parameters
    models = (load_model(out / mpath, digest), load_model(out / wpath, digest))
    return Prepared(fitted.dataset, fitted.train, fitted.val, fitted.test, fitted.context, *models), files


def dataset_entry(cfg: GridConfig, name: str, prep: Prepared) -> dict:
    fp = load_dataset(cfg, name).fingerprint()
    return {"fingerprint": fp, "n": prep.dataset.n, "d": prep.dataset.d, "model_key": model_key(cfg),
            "files": {p: _sha256(cfg.out_dir / p) for p in _model_paths(cfg, fp)}}


# ---------------------------------------------------------------- manifest

def read_manifest(out_dir) -> dict | None:
    path = Path(out_dir) / MANIFEST
    if not path.exists():
        return None
    return json.loads(path.read_text(encoding="utf-8"))


def write_manifest(out_dir, manifest: dict) -> None:
    _write(Path(out_dir) / MANIFEST, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def manifest_files(manifest: dict) -> list[str]:
    """Every artifact path the manifest references (duplicates kept)."""
    paths = []
    for d in manifest.get("datasets", {}).values():
        paths.extend(d.get("files", {}))
    for c in manifest.get("cells", []):
        paths.extend(c.get("files", {}))
    paths.extend(manifest.get("artifacts", {}))
    return paths


def _new_manifest(cfg: GridConfig, previous: dict | None) -> dict:
    m = {"tool": "tabablate", "tool_version": __version__, "schema_version": cfg.schema_version,
         "config_hash": cfg.hash(), "config": cfg.canonical(), "datasets": {}, "cells": [],
         "artifacts": {}, "timing": {}}
    if previous:
        m["datasets"] = previous.get("datasets", {})
        m["artifacts"] = previous.get("artifacts", {})
    return m


def _cell_key(cfg: GridConfig, cell: Cell, fingerprint: str) -> str:
    exp = cfg.experiment(cell.method, cell.baseline, cell.perturbation, cell.mode).to_dict()
    return canonical_hash({"experiment": exp, "dataset": fingerprint, "model": model_key(cfg),
                           "random_features": cfg.random_features, "tool_version": __version__})


def _reusable(out: Path, entry: dict | None, key: str) -> bool:
    if not entry or entry.get("status") != OK or entry.get("key") != key:
        return False
    return all((out / rel).exists() and _sha256(out / rel) == sha for rel, sha in entry["files"].items())


# ---------------------------------------------------------------- execution

def _run_group(cfg: GridConfig, cells: list[Cell], prep: Prepared | None = None) -> list[dict]:
    """Evaluate cells sharing (dataset, method, baseline) with shared caches."""
    if prep is None:
        prep, _ = prepared_for(cfg, cells[0].dataset, train=False)
    cache, random_curves, out = {}, {}, []
    for cell in cells:
        t0 = time.perf_counter()
        try:
            res = run_cell(prep, cfg.experiment(cell.method, cell.baseline, cell.perturbation, cell.mode),
                           cache=cache, random_curves=random_curves)
            blob = res.to_json()
            blob["cell"] = asdict(cell)
            out.append({"id": cell.id, "status": OK, "error": None,
                        "result": json.dumps(blob, indent=2, sort_keys=True) + "\n",
                        "curve": res.curve_csv(), "seconds": time.perf_counter() - t0})
        except Exception as e:  # one bad cell must not abort the grid
            log.warning("cell %s failed: %s", cell.id, e)
            out.append({"id": cell.id, "status": FAILED, "error": f"{type(e).__name__}: {e}",
                        "seconds": time.perf_counter() - t0})
    return out


def run_grid(cfg: GridConfig, *, jobs: int = 1, force: bool = False) -> dict:
    """Run (or reuse) every cell of the grid and return the manifest."""
    t_start = time.perf_counter()
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    previous = read_manifest(out)
    manifest = _new_manifest(cfg, previous)
    old_cells = {c["id"]: c for c in (previous or {}).get("cells", [])}

    preps = {}
    for dc in cfg.datasets:
        prep, _ = prepared_for(cfg, dc.name, force=force)
        preps[dc.name] = prep
        manifest["datasets"][dc.name] = dataset_entry(cfg, dc.name, prep)
    manifest["datasets"] = {k: v for k, v in manifest["datasets"].items() if k in preps}

    cells = enumerate_cells(cfg)
    entries, pending = {}, {}
    for cell in cells:
        fp = manifest["datasets"][cell.dataset]["fingerprint"]
        key = _cell_key(cfg, cell, fp)
        base = {"id": cell.id, **asdict(cell), "trials": cfg.trials,
                "seeds": {"run": cfg.seed, "dataset": _dataset_seed(cfg, cell.dataset)}, "key": key}
        old = old_cells.get(cell.id)
        if not force and _reusable(out, old, key):
            entries[cell.id] = {**old, "cached": True}
        else:
            entries[cell.id] = {**base, "status": "pending", "files": {}}
            pending.setdefault(cell.group, []).append(cell)

    def record(results):
        for r in results:
            e = entries[r["id"]]
            e.update(status=r["status"], error=r["error"], seconds=round(r["seconds"], 3), cached=False)
            cdir = Path("cells") / r["id"]
            if r["status"] == OK:
                e["files"] = {str(cdir / "result.json"): _write(out / cdir / "result.json", r["result"]),
                              str(cdir / "curve.csv"): _write(out / cdir / "curve.csv", r["curve"])}
            else:
                shutil.rmtree(out / cdir, ignore_errors=True)
                e["files"] = {}
        manifest["cells"] = [entries[c.id] for c in cells]
        write_manifest(out, manifest)

    groups = list(pending.values())
    if jobs > 1 and len(groups) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for results in pool.map(_run_group, [cfg] * len(groups), groups):
                record(results)
    else:
        for g in groups:
            record(_run_group(cfg, g, preps[g[0].dataset]))

    manifest["cells"] = [entries[c.id] for c in cells]
    _prune(out, manifest)
    n_cached = sum(1 for e in manifest["cells"] if e.get("cached"))
    manifest["timing"] = {"seconds": round(time.perf_counter() - t_start, 3),
                          "computed": len(cells) - n_cached, "reused": n_cached}
    write_manifest(out, manifest)
    return manifest


def _dataset_seed(cfg: GridConfig, name: str) -> int:
    dc = next(d for d in cfg.datasets if d.name == name)
    return cfg.seed if dc.seed is None else dc.seed


def _prune(out: Path, manifest: dict) -> None:
    # cells or models that left the grid would otherwise be orphan outputs
    keep = set(manifest_files(manifest))
    for sub in ("cells", "models"):
        root = out / sub
        if not root.is_dir():
            continue
        for path in sorted(root.rglob("*"), reverse=True):
            rel = path.relative_to(out).as_posix()
            if path.is_file() and rel not in keep:
                path.unlink()
            elif path.is_dir() and not any(path.iterdir()):
                path.rmdir()


def failed_cells(manifest: dict) -> list[str]:
    return [c["id"] for c in manifest.get("cells", []) if c.get("status") != OK]


# ---------------------------------------------------------------- reports

def load_results(out_dir, manifest: dict) -> dict[str, dict]:
    out = Path(out_dir)
    results = {}
    for c in manifest["cells"]:
        if c.get("status") == OK:
            rel = next(p for p in c["files"] if p.endswith("result.json"))
            results[c["id"]] = json.loads((out / rel).read_text(encoding="utf-8"))
    return results


def _mean_table(results: list[dict], row_key: str, area: str) -> list[dict]:
    acc = {}
    for r in results:
        cell = r["cell"]
        acc.setdefault(cell[row_key], {LOCAL: [], GLOBAL: []})[cell["mode"]].append(r["areas"][area])
    rows = []
    for name, by_mode in acc.items():
        row = {row_key: name}
        for mode in (LOCAL, GLOBAL):
            vals = by_mode[mode]
            row[mode] = float(np.mean(vals)) if vals else float("nan")
            row[f"n_{mode}"] = len(vals)
        rows.append(row)

    def order(row):
        vals = [row[m] for m in (LOCAL, GLOBAL) if row[f"n_{m}"]]
        return -float(np.mean(vals)) if vals else 0.0
    rows.sort(key=lambda r: (order(r), r[row_key]))
    return rows


def report_tables(manifest: dict, out_dir=None, results: dict | None = None) -> dict[str, list[dict]]:
    """Perturbation x mode quadrant-III table and baseline x mode
    area-between-random table, each averaged over every other axis and
    sorted by decreasing row mean. Writes ``tables/*.csv`` when
    ``out_dir`` is given."""
    missing = failed_cells(manifest)
    if missing:
        raise IncompleteGrid(missing)
    if results is None:
        results = load_results(out_dir, manifest)
    missing = [c["id"] for c in manifest["cells"] if c["id"] not in results]
    if missing:
        raise IncompleteGrid(missing)
    rs = [results[c["id"]] for c in manifest["cells"]]
    tables = {"quadrant3_by_perturbation": _mean_table(rs, "perturbation", "quadrant3_area"),
              "area_between_random_by_baseline": _mean_table(rs, "baseline", "area_between_random")}
    if out_dir is not None:
        for name, rows in tables.items():
            rel = f"tables/{name}.csv"
            manifest.setdefault("artifacts", {})[rel] = _write(Path(out_dir) / rel, rows_to_csv(rows))
    return tables


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def render_plots(manifest: dict, out_dir) -> list[str]:
    """One SVG per (dataset, method, perturbation, mode) overlaying baselines."""
    results = load_results(out_dir, manifest)
    panels = {}
    for c in manifest["cells"]:
        if c["id"] in results:
            panels.setdefault((c["dataset"], c["method"], c["perturbation"], c["mode"]), []).append(results[c["id"]])
    written = []
    for (ds, method, pert, mode), rs in sorted(panels.items()):
        g = [r["guardrails"] for r in rs]
        spec = PlotSpec(
            curves=[Curve(r["cell"]["baseline"], np.array(r["mean_curve"]), np.array(r["std_curve"]),
                          np.array(r["fractions"])) for r in rs],
            horizontal=float(np.mean([x["horizontal"] for x in g])),
            vertical=float(np.mean([x["vertical_fraction"] for x in g])),
            title=f"{ds}: {method}, {pert} perturbation, {mode}")
        rel = f"plots/{ds}__{method}__{pert}__{mode}.svg"
        manifest.setdefault("artifacts", {})[rel] = _write(Path(out_dir) / rel, render_plot(spec))
        written.append(rel)
    return written


def run_sweeps(cfg: GridConfig, manifest: dict) -> dict[str, list[dict]]:
    """Baseline sample-size sweep per dataset, written to ``tables/``."""
    out = cfg.out_dir
    tables = {}
    for dc in cfg.datasets:
        prep, files = prepared_for(cfg, dc.name)
        if files:
            manifest.setdefault("datasets", {}).setdefault(dc.name, {})["files"] = files
        sw = cfg.sweep
        res = sample_size_sweep(prep.context, prep.model, sw["method"], prep.encoded(prep.test), sw["sizes"],
                                seed=cfg.seed, repeats=int(sw["repeats"]), output=cfg.output)
        rows = res.to_rows()
        rel = f"tables/sweep_{dc.name}.csv"
        manifest.setdefault("artifacts", {})[rel] = _write(out / rel, rows_to_csv(rows))
        tables[dc.name] = rows
    return tables
