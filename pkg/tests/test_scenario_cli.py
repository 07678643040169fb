import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from hypbc.cli import main
from hypbc.errors import ScenarioError
from hypbc.scenario import (build_bundle, build_signal, eval_coefficient,
                            load_scenario, parse_scenario)
from hypbc import SpatialGrid

SCENARIO_DIR = Path(__file__).resolve().parents[1] / "src/hypbc/scenarios"


def small_scenario(n_cells=60, horizon_tau=4.0, **overrides):
    raw = {
        "schema_version": 1,
        "name": "tiny",
        "grid": {"n_cells": n_cells},
        "plant": {"lambda": 1.0, "mu": 1.0, "gamma1": 0.5, "gamma2": 0.5,
                  "q": 0.8, "rho": 0.3},
        "disturbances": {"d3": 1.0, "m1": 0.0, "m2": 0.0},
        "controller": {"mode": "state", "rho_tilde": 0.5, "k_I": "auto",
                       "margin": 0.5},
        "sim": {"dt": "auto", "horizon_tau": horizon_tau},
        "checks": [{"type": "finite", "name": "finite"}],
    }
    for key, val in overrides.items():
        raw[key] = val
    return raw


def write_toml(tmp_path, raw, name="scn.toml"):
    # serialize via JSON, accepted by the loader
    path = tmp_path / name.replace(".toml", ".json")
    path.write_text(json.dumps(raw))
    return path


def test_eval_coefficient_forms():
    grid = SpatialGrid.make(10)
    assert np.allclose(eval_coefficient(2.0, grid, "w"), 2.0)
    vals = eval_coefficient("1 + 0.5*x", grid, "w")
    assert vals[0] == 1.0 and vals[-1] == pytest.approx(1.5)
    table = list(np.linspace(0, 1, 11))
    assert np.allclose(eval_coefficient(table, grid, "w"), table)
    with pytest.raises(ScenarioError):
        eval_coefficient([1.0, 2.0], grid, "w")
    with pytest.raises(ScenarioError):
        eval_coefficient("import os", grid, "w")


def test_build_signal_forms():
    assert build_signal(None, "w")(3.0) == 0.0
    assert build_signal(0.7, "w")(2.0) == pytest.approx(0.7)
    s = build_signal({"type": "sinusoid", "amplitude": 2.0, "omega": 1.0},
                     "w")
    assert s(np.pi / 2) == pytest.approx(2.0)
    with pytest.raises(ScenarioError):
        build_signal({"type": "nope"}, "w")
    with pytest.raises(ScenarioError):
        build_signal({"type": "sinusoid"}, "w")


def test_parse_scenario_rejects_missing_sections():
    with pytest.raises(ScenarioError):
        parse_scenario({"schema_version": 1, "grid": {"n_cells": 10}})
    with pytest.raises(ScenarioError):
        parse_scenario({"schema_version": 99, "grid": {"n_cells": 10},
                        "plant": {}})


def test_bundled_scenarios_parse():
    for name in ("static_d3.toml", "noise_bounded.toml",
                 "eps_threshold_template.toml"):
        scn = load_scenario(SCENARIO_DIR / name)
        assert scn.raw["grid"]["n_cells"] >= 2


def test_build_bundle_resolves_auto(tmp_path):
    scn = parse_scenario(small_scenario())
    bundle = build_bundle(scn)
    assert bundle.resolved["k_I"] < 0
    assert bundle.report.stable
    assert bundle.resolved["tau"] == pytest.approx(2.0, abs=1e-9)


def test_simulate_cli_roundtrip(tmp_path):
    path = write_toml(tmp_path, small_scenario())
    out = tmp_path / "out"
    assert main(["simulate", str(path), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["all_checks_passed"]
    assert (out / "trace.csv").exists()
    assert (out / "plots.svg").exists()


def test_simulate_cli_deterministic(tmp_path):
    raw = small_scenario()
    raw["disturbances"]["noise"] = {"type": "uniform_noise",
                                    "amplitude": 0.05, "seed": 5,
                                    "hold": 0.02}
    path = write_toml(tmp_path, raw)
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert main(["simulate", str(path), "--out", str(out1),
                 "--no-plots"]) == 0
    assert main(["simulate", str(path), "--out", str(out2),
                 "--no-plots"]) == 0
    assert (out1 / "trace.csv").read_bytes() == (out2 / "trace.csv").read_bytes()
    assert (out1 / "summary.json").read_bytes() == \
        (out2 / "summary.json").read_bytes()


def test_simulate_cli_schema_error(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("this is not toml = = =")
    assert main(["simulate", str(path), "--out", str(tmp_path / "o")]) == 2
    raw = small_scenario()
    del raw["plant"]["q"]
    path2 = write_toml(tmp_path, raw, "bad2.toml")
    assert main(["simulate", str(path2), "--out", str(tmp_path / "o")]) == 2


def test_simulate_cli_divergence_exit(tmp_path):
    raw = small_scenario(n_cells=40, horizon_tau=80.0)
    # open loop with |rho q| > 1 grows without bound
    raw["plant"]["rho"] = -1e6
    raw["plant"]["q"] = 1.0
    raw["plant"]["gamma1"] = 0.0
    raw["plant"]["gamma2"] = 0.0
    raw["controller"] = {"mode": "open", "rho_tilde": 0.0, "k_I": 0.0}
    raw["disturbances"] = {"d3": 1.0, "m1": 0.0, "m2": 0.0}
    path = write_toml(tmp_path, raw)
    out = tmp_path / "o"
    with np.errstate(over="ignore", invalid="ignore"):
        code = main(["simulate", str(path), "--out", str(out)])
    assert code == 3
    summary = json.loads((out / "summary.json").read_text())
    assert summary["divergence"] is not None


def test_gain_cli_inline(capsys):
    assert main(["gain", "--q", "1", "--rho", "0", "--rho-tilde", "0",
                 "--tau", "2", "--margin", "0.5", "--no-scan"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["k_I"] == pytest.approx(-np.pi / 8, rel=1e-9)
    assert payload["tau0"] == pytest.approx(4.0, rel=1e-9)
    assert abs(payload["tau0"] - payload["tau0_oracle"]) < 1e-9


def test_gain_cli_infeasible():
    assert main(["gain", "--q", "1", "--rho", "1.5", "--rho-tilde", "0.6",
                 "--tau", "2"]) == 4


def test_gain_cli_agreement_generic(capsys):
    assert main(["gain", "--q", "0.9", "--rho", "0.4", "--rho-tilde", "0.7",
                 "--tau", "1.5", "--margin", "0.6", "--no-scan"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert abs(payload["tau0"] - payload["tau0_oracle"]) < 1e-9


def test_nde_cli(tmp_path, capsys):
    assert main(["nde", "--k1", "-0.5", "--k2", "-1.0", "--tau", "1.0",
                 "--out", str(tmp_path)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["stable"] is True
    roots = (tmp_path / "roots.csv").read_text().splitlines()
    assert roots[0] == "re,im" and len(roots) > 2


def test_kernels_cli(tmp_path, capsys):
    path = write_toml(tmp_path, small_scenario(n_cells=50))
    assert main(["kernels", str(path), "--out", str(tmp_path), "--check"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["checks_passed"]
    assert (tmp_path / "kernels" / "kuu.csv").exists()
    assert (tmp_path / "kernels" / "weights.csv").exists()


def test_sweep_cli_epsilon_threshold(tmp_path):
    """Sweeping the blend across the admissible boundary localizes the
    growth/decay flip within one grid step of 0.5."""
    out = tmp_path / "sweep"
    env = dict(os.environ, HYPBC_WORKERS="2")
    proc = subprocess.run(
        [sys.executable, "-m", "hypbc.cli", "sweep",
         str(SCENARIO_DIR / "eps_sweep.toml"), "--out", str(out)],
        capture_output=True, text=True, env=env)
    assert proc.returncode == 0, proc.stderr
    rows = {}
    header = None
    for line in (out / "sweep.csv").read_text().splitlines():
        if header is None:
            header = line.split(",")
            continue
        rec = dict(zip(header, line.split(",")))
        rows[float(rec["controller.epsilon"])] = float(rec["obs_window_ratio"])
    eps_sorted = sorted(rows)
    growing = [e for e in eps_sorted if rows[e] > 1.05]
    decaying = [e for e in eps_sorted if rows[e] < 0.95]
    flip = 0.5 * (max(growing) + min(decaying))
    assert abs(flip - 0.5) <= 0.05
    assert min(decaying) - max(growing) <= 0.1 + 1e-12


def test_sweep_cli_empty_axes_matches_simulate(tmp_path):
    raw = small_scenario()
    spec = {"scenario": raw, "axes": []}
    spec_path = write_toml(tmp_path, spec, "sweep.toml")
    out = tmp_path / "s"
    assert main(["sweep", str(spec_path), "--out", str(out)]) == 0
    agg = json.loads((out / "aggregate.json").read_text())
    assert len(agg["points"]) == 1
    assert agg["points"][0]["status"] == "ok"

    out2 = tmp_path / "ref"
    path = write_toml(tmp_path, raw, "ref.toml")
    assert main(["simulate", str(path), "--out", str(out2),
                 "--no-plots"]) == 0
    summary = json.loads((out2 / "summary.json").read_text())
    assert agg["points"][0]["sup_abs_y"] == pytest.approx(
        summary["sup_abs_y"], rel=1e-12)


def test_cli_entrypoint_subprocess(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "hypbc.cli", "gain", "--q", "1", "--rho",
         "0", "--tau", "2", "--no-scan"],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["stable"] is True


def test_gain_cli_with_scenario_file(tmp_path, capsys):
    raw = small_scenario(n_cells=60)
    path = write_toml(tmp_path, raw)
    assert main(["gain", str(path)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["stable"] is True
    assert payload["k_I"] < 0
    # solved boundary factor feeds k2, so |k2| != |k_I q| here
    assert abs(payload["k2"]) != pytest.approx(abs(payload["k_I"] * 0.8))
