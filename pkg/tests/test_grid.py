import json
from pathlib import Path

import numpy as np
import pytest

import tabablate.grid as grid_mod
from tabablate.cli import main
from tabablate.config import load_config, parse_config
from tabablate.errors import ConfigError, ConfigRoleViolation, IncompleteGrid
from tabablate.grid import (
    enumerate_cells,
    failed_cells,
    manifest_files,
    read_manifest,
    render_plots,
    report_tables,
    run_grid,
)

SMALL = """
schema_version = 1
seed = 0
out = "run"

[[datasets]]
name = "syn"
n_samples = 240

[model]
kind = "mlp"
max_epochs = 30
patience = 5

[grid]
methods = ["deep_shap"]
baselines = ["training", "constant_median"]
perturbations = ["constant_median", "max_distance"]
modes = ["local", "global"]
trials = 2

[sweep]
sizes = [5, 20, 0]
repeats = 2
"""


def write_config(tmp_path, text=SMALL, name="grid.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def on_disk(out: Path) -> list[str]:
    return sorted(p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file()
                  and p.name != "manifest.json")


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("grid")
    cfg = load_config(write_config(tmp))
    return cfg, run_grid(cfg)


# ---------------------------------------------------------------- config

def test_role_filtered_cell_count():
    text = """
[[datasets]]
name = "syn"
[grid]
methods = ["integrated_gradients", "kernel_shap", "deep_shap"]
distributions = ["constant_median", "marginal", "max_distance", "training", "opposite_class",
                 "nearest_neighbors"]
modes = ["local", "global"]
"""
    cfg = parse_config(text)
    # constant_median serves both roles, marginal/max_distance only perturb,
    # the other three only serve as baselines: 3 methods x 4 x 3 x 2 modes
    assert len(enumerate_cells(cfg)) == cfg.n_cells == 3 * 4 * 3 * 2 == 72
    assert set(cfg.baselines) == {"constant_median", "training", "opposite_class", "nearest_neighbors"}
    assert set(cfg.perturbations) == {"constant_median", "marginal", "max_distance"}
    ids = [c.id for c in enumerate_cells(cfg)]
    assert len(set(ids)) == 72


def test_marginal_baseline_rejected_with_line():
    text = '[[datasets]]\nname = "syn"\n[grid]\nbaselines = [\n  "training",\n  "marginal",\n]\n'
    with pytest.raises(ConfigRoleViolation) as e:
        parse_config(text)
    assert e.value.line == 6


def test_perturbation_role_violation():
    text = '[[datasets]]\nname = "syn"\n[grid]\nperturbations = ["opposite_class"]\n'
    with pytest.raises(ConfigRoleViolation) as e:
        parse_config(text)
    assert e.value.line == 4


@pytest.mark.parametrize("text, line", [
    ('[[datasets]]\nname = "syn"\n[grid]\ntrials = = 3\n', 4),
    ('[[datasets]]\nname = "syn"\ncolour = 1\n', 3),
    ('[[datasets]]\nname = "syn"\n[grid]\nmodes = ["local", "sideways"]\n', 4),
    ('schema_version = 7\n[[datasets]]\nname = "syn"\n', 1),
    ('[[datasets]]\nname = "syn"\n[grid]\ntrials = 0\n', 4),
])
def test_config_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as e:
        parse_config(text)
    assert e.value.line == line
    assert f"line {line}" in str(e.value)


def test_config_semantic_checks():
    with pytest.raises(ConfigError):
        parse_config('seed = 0\n')  # no datasets
    with pytest.raises(ConfigError):
        parse_config('[[datasets]]\nname = "c"\nkind = "csv"\n')
    with pytest.raises(ConfigError):
        parse_config('[[datasets]]\nname = "s"\n[grid]\nmethods = ["linear_shap"]\n')
    cfg = parse_config('[[datasets]]\nname = "s"\n[model]\nkind = "linear"\n[grid]\nmethods = ["linear_shap"]\n')
    assert cfg.methods == ("linear_shap",)


def test_config_hash_ignores_formatting(tmp_path):
    a = parse_config(SMALL)
    reformatted = "\n".join("  " + line.replace(" = ", "=") if "=" in line else line
                            for line in SMALL.splitlines()) + "\n\n# comment\n"
    b = parse_config(reformatted, base_dir=tmp_path)
    assert a.hash() == b.hash()
    assert parse_config(SMALL.replace("trials = 2", "trials = 3")).hash() != a.hash()
    assert parse_config(SMALL, seed=5).hash() != a.hash()
    assert parse_config(SMALL, out="elsewhere").out == "elsewhere"


def test_sweep_zero_means_full():
    assert parse_config(SMALL).sweep["sizes"] == [5, 20, None]


# ---------------------------------------------------------------- run_grid

def test_manifest_layout(small_run):
    cfg, m = small_run
    assert m["config_hash"] == cfg.hash()
    assert len(m["cells"]) == cfg.n_cells == 8
    assert not failed_cells(m)
    cell = m["cells"][0]
    for k in ("dataset", "method", "baseline", "perturbation", "mode", "trials", "seeds", "files", "key"):
        assert k in cell
    ds = m["datasets"]["syn"]
    assert ds["n"] == 240 and ds["d"] == 24
    result = json.loads((cfg.out_dir / f"cells/{cell['id']}/result.json").read_text())
    assert result["cell"]["method"] == "deep_shap"
    assert {"guardrails", "areas", "scores"} <= set(result)


def test_every_file_referenced_once(small_run):
    cfg, m = small_run
    refs = manifest_files(m)
    assert len(refs) == len(set(refs))
    assert on_disk(cfg.out_dir) == sorted(refs)


def test_rerun_reuses_everything(small_run):
    cfg, m = small_run
    before = {p: (cfg.out_dir / p).read_bytes() for p in on_disk(cfg.out_dir)}
    again = run_grid(cfg)
    assert again["timing"]["computed"] == 0 and again["timing"]["reused"] == 8
    assert {p: (cfg.out_dir / p).read_bytes() for p in on_disk(cfg.out_dir)} == before
    assert [c["files"] for c in again["cells"]] == [c["files"] for c in m["cells"]]


def test_forced_rerun_is_byte_identical(tmp_path, small_run):
    cfg, m = small_run
    other = load_config(write_config(tmp_path), out=str(tmp_path / "forced"))
    m2 = run_grid(other, jobs=2, force=True)
    assert m2["timing"]["computed"] == 8
    for a, b in zip(m["cells"], m2["cells"]):
        assert a["files"] == b["files"]  # same relative paths and sha256


def test_corrupted_cell_is_recomputed(tmp_path):
    cfg = load_config(write_config(tmp_path))
    m = run_grid(cfg)
    victim = next(p for p in manifest_files(m) if p.startswith("cells/"))
    (cfg.out_dir / victim).write_text("garbage")
    m2 = run_grid(cfg)
    assert m2["timing"]["computed"] == 1
    # shrinking the grid prunes the dropped cells
    smaller = SMALL.replace('modes = ["local", "global"]', 'modes = ["global"]')
    cfg2 = load_config(write_config(tmp_path, smaller))
    m3 = run_grid(cfg2)
    assert m3["timing"]["computed"] == 0 and len(m3["cells"]) == 4
    assert on_disk(cfg2.out_dir) == sorted(manifest_files(m3))


def test_cell_failure_is_recorded(tmp_path, monkeypatch):
    real = grid_mod.run_cell

    def flaky(prep, exp, **kw):
        if exp.perturbation == "max_distance" and exp.mode == "local":
            raise RuntimeError("boom")
        return real(prep, exp, **kw)

    monkeypatch.setattr(grid_mod, "run_cell", flaky)
    path = write_config(tmp_path)
    assert main(["ablate", "--config", str(path)]) == 2
    m = read_manifest(tmp_path / "run")
    bad = failed_cells(m)
    assert len(bad) == 2 and all("max_distance__local" in b for b in bad)
    assert all(c["error"] == "RuntimeError: boom" for c in m["cells"] if c["id"] in bad)
    assert on_disk(tmp_path / "run") == sorted(manifest_files(m))
    with pytest.raises(IncompleteGrid) as e:
        report_tables(m, tmp_path / "run")
    assert sorted(e.value.missing) == sorted(bad)
    assert main(["report", "--config", str(path)]) == 2
    # the failures are retried once the cause is gone
    monkeypatch.setattr(grid_mod, "run_cell", real)
    assert main(["ablate", "--config", str(path)]) == 0
    assert read_manifest(tmp_path / "run")["timing"]["computed"] == 2


# ---------------------------------------------------------------- reports

def fake_results(areas: dict):
    """Manifest + results keyed by (perturbation, baseline, mode) -> (q3, between)."""
    cells, results = [], {}
    for (pert, base, mode), (q3, between) in areas.items():
        cid = f"syn__deep_shap__{base}__{pert}__{mode}"
        cells.append({"id": cid, "status": "ok", "files": {}})
        results[cid] = {"cell": {"perturbation": pert, "baseline": base, "mode": mode},
                        "areas": {"quadrant3_area": q3, "area_between_random": between}}
    return {"cells": cells}, results


def test_report_orders_by_area():
    areas = {}
    for pert in ("constant_median", "marginal", "max_distance"):
        for base in ("training", "nearest_neighbors"):
            for mode in ("local", "global"):
                q3 = 0.02 if pert == "max_distance" else 0.005
                areas[(pert, base, mode)] = (q3, 0.1 if base == "training" else 0.08)
    m, res = fake_results(areas)
    tables = report_tables(m, results=res)
    t3 = tables["quadrant3_by_perturbation"]
    assert t3[0]["perturbation"] == "max_distance"
    assert t3[0]["local"] == pytest.approx(0.02) and t3[1]["global"] == pytest.approx(0.005)
    t4 = tables["area_between_random_by_baseline"]
    assert [r["baseline"] for r in t4] == ["training", "nearest_neighbors"]
    assert t4[0]["n_local"] == 3


def test_report_single_perturbation():
    m, res = fake_results({("marginal", "training", "local"): (0.01, 0.0),
                           ("marginal", "training", "global"): (0.03, 0.0)})
    t3 = report_tables(m, results=res)["quadrant3_by_perturbation"]
    assert len(t3) == 1
    assert (t3[0]["local"], t3[0]["global"]) == (0.01, 0.03)


def test_report_missing_results():
    m, res = fake_results({("marginal", "training", "local"): (0.01, 0.0)})
    with pytest.raises(IncompleteGrid):
        report_tables(m, results={})


# ---------------------------------------------------------------- cli

def test_cli_end_to_end(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "data"), "--n-samples", "240", "--seed", "2"]) == 0
    for name in ("synthetic.csv", "synthetic.schema.json", "synthetic.truth.json"):
        assert (tmp_path / "data" / name).exists()
    text = SMALL.replace('name = "syn"\nn_samples = 240',
                         'name = "syn"\nkind = "csv"\npath = "data/synthetic.csv"\n'
                         'schema = "data/synthetic.schema.json"\nlabel = "label"')
    path = write_config(tmp_path, text)
    assert main(["report", "--config", str(path)]) == 1  # nothing to report yet
    assert main(["train", "--config", str(path)]) == 0
    assert main(["ablate", "--config", str(path)]) == 0
    assert main(["report", "--config", str(path)]) == 0
    assert main(["plot", "--config", str(path)]) == 0
    assert main(["sweep", "--config", str(path)]) == 0
    out = tmp_path / "run"
    m = read_manifest(out)
    assert len(list((out / "plots").glob("*.svg"))) == 4
    assert (out / "tables" / "quadrant3_by_perturbation.csv").exists()
    sweep = (out / "tables" / "sweep_syn.csv").read_text().splitlines()
    assert sweep[0] == "size,tau_mean,tau_std" and sweep[-1].startswith("144,1.0,0.0")
    assert on_disk(out) == sorted(manifest_files(m))
    assert "reused" in capsys.readouterr().out


def test_cli_config_errors(tmp_path, capsys):
    assert main(["ablate", "--config", str(tmp_path / "missing.toml")]) == 1
    bad = write_config(tmp_path, '[[datasets]]\nname = "s"\n[grid]\nbaselines = ["marginal"]\n')
    assert main(["ablate", "--config", str(bad)]) == 1
    assert "line 4" in capsys.readouterr().err
    assert main(["ablate", "--config", str(bad), "--jobs", "0"]) == 1


def test_cli_overrides(tmp_path):
    path = write_config(tmp_path)
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "o2"), "--seed", "3"]) == 0
    m = read_manifest(tmp_path / "o2")
    assert m["datasets"]["syn"]["n"] == 240
    models = sorted(p.name for p in (tmp_path / "o2" / "models").iterdir())
    assert len(models) == 2


def test_render_plots_overlay_baselines(small_run):
    cfg, m = small_run
    written = render_plots(m, cfg.out_dir)
    assert len(written) == 4  # one per (perturbation, mode)
    svg = (cfg.out_dir / written[0]).read_text()
    assert svg.count('class="curve"') == 2
    assert np.all([p in m["artifacts"] for p in written])
