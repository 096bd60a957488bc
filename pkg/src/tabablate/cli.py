"""Command line entry point: ``tabablate <subcommand> [flags]``.

Exit codes: 0 success, 1 configuration error, 2 partial grid failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import load_config
from .data import SyntheticSpec, synthesize
from .errors import ConfigError, IncompleteGrid
from .model import evaluate
from .grid import (
    dataset_entry,
    failed_cells,
    prepared_for,
    read_manifest,
    render_plots,
    report_tables,
    run_grid,
    run_sweeps,
    write_manifest,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2

log = logging.getLogger("tabablate")


def _cfg(args):
    return load_config(args.config, seed=args.seed, out=args.out)


def cmd_synth(args) -> int:
    """Write the synthetic benchmark (CSV + schema sidecar + coefficients)."""
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    spec = SyntheticSpec(args.n_continuous, args.n_categorical, args.n_levels, args.n_samples, args.seed or 0)
    ds, gt = synthesize(spec)
    ds.to_csv(out / "synthetic.csv")
    (out / "synthetic.truth.json").write_text(json.dumps({
        "coefficients": gt.coefficients.tolist(), "groups": [list(g) for g in gt.groups],
        "categorical": list(gt.categorical), "feature_importance": gt.feature_importance().tolist(),
    }, indent=2) + "\n")
    print(f"wrote {out / 'synthetic.csv'} ({ds.n} rows, {ds.d} features)")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _cfg(args)
    manifest = read_manifest(cfg.out_dir) or {"datasets": {}, "cells": [], "artifacts": {}}
    for dc in cfg.datasets:
        prep, files = prepared_for(cfg, dc.name, force=args.force)
        manifest.setdefault("datasets", {})[dc.name] = dataset_entry(cfg, dc.name, prep)
        acc = evaluate(prep.model, prep.encoded(prep.test), prep.test.labels)
        print(f"{dc.name}: test accuracy {acc:.3f}{'' if files else ' (cached)'}")
    write_manifest(cfg.out_dir, manifest)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _cfg(args)
    manifest = run_grid(cfg, jobs=args.jobs, force=args.force)
    bad = failed_cells(manifest)
    t = manifest["timing"]
    print(f"{len(manifest['cells'])} cells: {t['computed']} computed, {t['reused']} reused, "
          f"{len(bad)} failed ({t['seconds']:.1f}s); manifest at {cfg.out_dir / 'manifest.json'}")
    for c in manifest["cells"]:
        if c.get("error"):
            print(f"  {c['id']}: {c['error']}", file=sys.stderr)
    return EXIT_PARTIAL if bad else EXIT_OK


def _manifest_or_fail(cfg):
    manifest = read_manifest(cfg.out_dir)
    if manifest is None:
        raise ConfigError(f"no manifest in {cfg.out_dir}; run 'ablate' first")
    return manifest


def cmd_report(args) -> int:
    cfg = _cfg(args)
    manifest = _manifest_or_fail(cfg)
    try:
        tables = report_tables(manifest, cfg.out_dir)
    except IncompleteGrid as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARTIAL
    write_manifest(cfg.out_dir, manifest)
    for name, rows in tables.items():
        print(name)
        for r in rows:
            key = next(iter(r))
            print(f"  {r[key]:<20} local {r['local']:.4f}  global {r['global']:.4f}")
    return EXIT_OK


def cmd_plot(args) -> int:
    cfg = _cfg(args)
    manifest = _manifest_or_fail(cfg)
    written = render_plots(manifest, cfg.out_dir)
    write_manifest(cfg.out_dir, manifest)
    print(f"wrote {len(written)} plots to {cfg.out_dir / 'plots'}")
    return EXIT_PARTIAL if failed_cells(manifest) else EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _cfg(args)
    manifest = read_manifest(cfg.out_dir) or {"artifacts": {}, "datasets": {}, "cells": []}
    tables = run_sweeps(cfg, manifest)
    write_manifest(cfg.out_dir, manifest)
    for name, rows in tables.items():
        print(name)
        for r in rows:
            print(f"  size {r['size']:>6}  tau {r['tau_mean']:.3f} +/- {r['tau_std']:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tabablate", description="Ablation studies for tabular feature attributions.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="TOML grid configuration")
        sp.add_argument("--seed", type=int, default=None, help="override the run seed")
        sp.add_argument("--out", default=None, help="override the output directory")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for grid cells")
        sp.add_argument("--force", action="store_true", help="ignore cached models and cells")
        sp.add_argument("-v", "--verbose", action="store_true")

    s = sub.add_parser("synth", help="write the synthetic benchmark to --out")
    common(s, config=False)
    s.add_argument("--n-samples", type=int, default=1000)
    s.add_argument("--n-continuous", type=int, default=15)
    s.add_argument("--n-categorical", type=int, default=5)
    s.add_argument("--n-levels", type=int, default=6)
    s.set_defaults(func=cmd_synth)
    for name, func, text in (("train", cmd_train, "train or load the cached models"),
                             ("ablate", cmd_ablate, "run the experiment grid"),
                             ("report", cmd_report, "write the area tables"),
                             ("plot", cmd_plot, "write SVG ablation plots"),
                             ("sweep", cmd_sweep, "baseline sample-size sweep")):
        s = sub.add_parser(name, help=text)
        common(s)
        s.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
