"""Scenario files: schema, loading, and assembly into runnable setups.

Scenarios are TOML (JSON accepted) and fully determine a run: plant
coefficients (constants, expression strings in x, or sample tables),
disturbance generators with seeds, controller configuration with
optional auto-designed integral gain and observer blend, simulation
settings, and the acceptance checks to evaluate. Identical scenario
plus seeds means bit-identical outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import signals as sig
from .errors import ScenarioError
from .kernels import (observer_gains, solve_control_kernels,
                      solve_integral_weights, solve_inverse_kernels,
                      solve_observer_kernels)
from .model import (ControlConfig, DisturbanceSet, SpatialGrid, SystemParams,
                    build_transport_maps, sample_on_grid,
                    validate_configuration)
from .nde import effective_gains, select_kI, stability_report
from .observer import epsilon_interval
from .plant import ClosedLoopSetup, SimConfig, TraceLog
from .steady import SteadySolver

SCHEMA_VERSION = 1

_EXPR_NAMES = {
    "sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt,
    "abs": np.abs, "pi": np.pi, "tanh": np.tanh,
}


def eval_coefficient(spec, grid: SpatialGrid, where: str) -> np.ndarray:
    """Constant, expression string in x, or explicit sample list."""
    if isinstance(spec, (int, float)):
        return np.full(grid.n_cells + 1, float(spec))
    if isinstance(spec, str):
        env = dict(_EXPR_NAMES)
        env["x"] = grid.nodes
        try:
            vals = eval(spec, {"__builtins__": {}}, env)  # noqa: S307
        except Exception as exc:
            raise ScenarioError(f"bad expression {spec!r}: {exc}", where)
        return sample_on_grid(vals, grid)
    if isinstance(spec, (list, tuple)):
        vals = np.asarray(spec, dtype=float)
        if vals.shape != (grid.n_cells + 1,):
            raise ScenarioError(
                f"sample table needs {grid.n_cells + 1} values, "
                f"got {vals.shape[0]}", where)
        return vals
    raise ScenarioError(f"cannot interpret coefficient {spec!r}", where)


def build_signal(spec, where: str) -> sig.TimeSignal:
    """Signal descriptor -> generator. Plain numbers mean constants."""
    if spec is None:
        return sig.zero()
    if isinstance(spec, (int, float)):
        return sig.Constant(float(spec))
    if not isinstance(spec, dict):
        raise ScenarioError(f"signal must be a number or table, got {spec!r}",
                            where)
    kind = spec.get("type")
    try:
        if kind == "constant":
            return sig.Constant(spec["value"])
        if kind == "sinusoid":
            return sig.Sinusoid(spec["amplitude"], spec["omega"],
                                spec.get("phase", 0.0), spec.get("offset", 0.0))
        if kind == "smoothstep":
            return sig.SmoothStep(spec["height"], spec.get("t_on", 0.0),
                                  spec.get("rise", 1.0))
        if kind == "random_fourier":
            return sig.RandomFourier(spec["amplitude"], int(spec["seed"]),
                                     int(spec.get("n_modes", 8)),
                                     spec.get("omega_max", 3.0))
        if kind == "uniform_noise":
            return sig.UniformNoise(spec["amplitude"], int(spec["seed"]),
                                    spec.get("hold", 0.01))
        if kind == "samples":
            return sig.Samples(spec["times"], spec["values"])
    except KeyError as exc:
        raise ScenarioError(f"missing field {exc} for signal type {kind!r}",
                            where)
    raise ScenarioError(f"unknown signal type {kind!r}", where)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float

    def to_dict(self):
        return {"name": self.name, "passed": self.passed,
                "value": self.value, "threshold": self.threshold}


@dataclass
class Scenario:
    """Parsed scenario, still declarative (nothing solved yet)."""

    raw: dict
    path: str = ""

    @property
    def name(self) -> str:
        return self.raw.get("name", Path(self.path).stem or "scenario")


def load_raw(path) -> dict:
    """Parse a TOML or JSON file into a dict, schema-agnostic."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"file not found: {path}")
    text = path.read_bytes()
    if path.suffix.lower() == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"JSON parse error: {exc}", str(path))
    else:
        try:
            raw = tomllib.loads(text.decode("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ScenarioError(f"TOML parse error: {exc}", str(path))
    if not isinstance(raw, dict):
        raise ScenarioError("file root must be a table", str(path))
    return raw


def load_scenario(path) -> Scenario:
    return parse_scenario(load_raw(path), str(path))


def parse_scenario(raw: dict, path: str = "") -> Scenario:
    if not isinstance(raw, dict):
        raise ScenarioError("scenario root must be a table")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema_version {version}",
                            "schema_version")
    for section in ("grid", "plant"):
        if section not in raw:
            raise ScenarioError("required section missing", section)
    for key, typ in (("n_cells", int),):
        if key not in raw["grid"] or not isinstance(raw["grid"][key], int):
            raise ScenarioError("grid.n_cells must be an integer",
                                "grid.n_cells")
    plant = raw["plant"]
    for key in ("lambda", "mu", "gamma1", "gamma2", "q", "rho"):
        if key not in plant:
            raise ScenarioError("required plant coefficient missing",
                                f"plant.{key}")
    return Scenario(raw=raw, path=path)


@dataclass
class RunBundle:
    """A scenario resolved into solver objects, ready to simulate."""

    scenario: Scenario
    setup: ClosedLoopSetup
    report: object
    checks: list
    resolved: dict


def _controller_section(scn: Scenario):
    return scn.raw.get("controller", {})


def build_bundle(scn: Scenario) -> RunBundle:
    """Solve kernels, resolve auto settings, and assemble the run."""
    raw = scn.raw
    grid = SpatialGrid.make(raw["grid"]["n_cells"])
    plant = raw["plant"]
    params = SystemParams(
        lam=eval_coefficient(plant["lambda"], grid, "plant.lambda"),
        mu=eval_coefficient(plant["mu"], grid, "plant.mu"),
        gamma1=eval_coefficient(plant["gamma1"], grid, "plant.gamma1"),
        gamma2=eval_coefficient(plant["gamma2"], grid, "plant.gamma2"),
        q=float(plant["q"]), rho=float(plant["rho"]))
    maps = build_transport_maps(params, grid)

    dsec = raw.get("disturbances", {})
    zeros = np.zeros(grid.n_cells + 1)
    dist = DisturbanceSet(
        d1=build_signal(dsec.get("d1"), "disturbances.d1"),
        d2=build_signal(dsec.get("d2"), "disturbances.d2"),
        d3=build_signal(dsec.get("d3"), "disturbances.d3"),
        d4=build_signal(dsec.get("d4"), "disturbances.d4"),
        m1=(eval_coefficient(dsec["m1"], grid, "disturbances.m1")
            if "m1" in dsec else zeros),
        m2=(eval_coefficient(dsec["m2"], grid, "disturbances.m2")
            if "m2" in dsec else zeros.copy()),
        n=build_signal(dsec.get("noise"), "disturbances.noise"))

    kern = solve_control_kernels(params, grid, maps)
    lset = solve_inverse_kernels(kern, grid)
    weights = solve_integral_weights(lset, params, grid)

    ctl = _controller_section(scn)
    mode = ctl.get("mode", "state")
    if mode not in ("state", "output", "open"):
        raise ScenarioError(f"unknown mode {mode!r}", "controller.mode")
    rho_tilde = float(ctl.get("rho_tilde", 0.0))

    k_i_spec = ctl.get("k_I", "auto")
    if k_i_spec == "auto":
        margin = float(ctl.get("margin", 0.5))
        k_i, report = select_kI(params, weights, maps, rho_tilde, margin,
                                scan=bool(ctl.get("scan", False)))
    elif isinstance(k_i_spec, (int, float)):
        k_i = float(k_i_spec)
        cfg0 = ControlConfig(rho_tilde=rho_tilde, k_I=k_i)
        report = stability_report(effective_gains(params, cfg0, weights, maps),
                                  scan=bool(ctl.get("scan", False)))
    else:
        raise ScenarioError("k_I must be a number or 'auto'",
                            "controller.k_I")

    eps_spec = ctl.get("epsilon", "auto" if mode == "output" else None)
    epsilon = None
    eps_admissible = None
    if eps_spec is not None:
        interval = epsilon_interval(params)
        if eps_spec == "auto":
            epsilon = interval.auto()
        elif isinstance(eps_spec, (int, float)):
            if not 0.0 <= float(eps_spec) <= 1.0:
                raise ScenarioError("epsilon must lie in [0, 1]",
                                    "controller.epsilon")
            epsilon = float(eps_spec)
        else:
            raise ScenarioError("epsilon must be a number or 'auto'",
                                "controller.epsilon")
        # inadmissible blends stay runnable (threshold sweeps cross the
        # boundary on purpose); admissibility is recorded, not fatal
        eps_admissible = interval.contains(epsilon)
    config = ControlConfig(rho_tilde=rho_tilde, k_I=k_i, epsilon=epsilon)

    vrep = validate_configuration(params, config)
    hard = {"lambda_positive", "mu_positive", "q_nonzero", "rho_q_below_one"}
    if mode != "open":
        hard.add("reflection_margin")
    for entry in vrep.failing():
        if entry.name in hard:
            raise ScenarioError(f"configuration invalid: {entry.name} "
                                f"(value {entry.value:g})", "plant")

    okern = None
    uhat0 = vhat0 = None
    init = raw.get("initial", {})
    need_observer = mode == "output" or bool(init.get("observer", False)) \
        or "uhat" in init or "vhat" in init
    if need_observer:
        if epsilon is None:
            epsilon = epsilon_interval(params).auto()
            config = ControlConfig(rho_tilde=rho_tilde, k_I=k_i,
                                   epsilon=epsilon)
        okern = observer_gains(solve_observer_kernels(params, grid, maps),
                               params, epsilon)
        uhat0 = (eval_coefficient(init["uhat"], grid, "initial.uhat")
                 if "uhat" in init else zeros.copy())
        vhat0 = (eval_coefficient(init["vhat"], grid, "initial.vhat")
                 if "vhat" in init else zeros.copy())

    u0 = (eval_coefficient(init["u"], grid, "initial.u")
          if "u" in init else zeros.copy())
    v0 = (eval_coefficient(init["v"], grid, "initial.v")
          if "v" in init else zeros.copy())
    eta0 = float(init.get("eta", 0.0))

    sim = raw.get("sim", {})
    dt_spec = sim.get("dt", "auto")
    if dt_spec == "auto":
        dt = grid.h / max(float(np.max(params.lam)), float(np.max(params.mu)))
    elif isinstance(dt_spec, (int, float)) and dt_spec > 0:
        dt = float(dt_spec)
    else:
        raise ScenarioError("dt must be positive or 'auto'", "sim.dt")
    if "horizon" in sim:
        horizon = float(sim["horizon"])
    else:
        horizon = float(sim.get("horizon_tau", 20.0)) * maps.tau
    scheme = sim.get("scheme", "upwind")

    steady = SteadySolver(params, grid, kern, lset, weights, dist, config)

    setup = ClosedLoopSetup(
        grid=grid, params=params, maps=maps, dist=dist, config=config,
        mode=mode, kernels=kern, lset=lset, weights=weights,
        sim=SimConfig(dt=dt, horizon=horizon, scheme=scheme),
        u0=u0, v0=v0, eta0=eta0, okernels=okern, uhat0=uhat0, vhat0=vhat0,
        steady=steady,
        open_loop_U=build_signal(ctl.get("open_loop_U"),
                                 "controller.open_loop_U")
        if mode == "open" else None)

    resolved = {"k_I": k_i, "rho_tilde": rho_tilde, "epsilon": epsilon,
                "epsilon_admissible": eps_admissible,
                "mode": mode, "dt": dt, "horizon": horizon,
                "tau": maps.tau, "n_cells": grid.n_cells,
                "boundary_factor": weights.boundary_factor}
    return RunBundle(scenario=scn, setup=setup, report=report,
                     checks=raw.get("checks", []), resolved=resolved)


def evaluate_checks(checks: list, trace: TraceLog, tau: float) -> list:
    """Run the scenario's declared acceptance checks on a trace."""
    results = []
    for idx, chk in enumerate(checks):
        kind = chk.get("type")
        where = f"checks[{idx}]"
        if kind == "y_below":
            tol = float(chk["tol"])
            lo = float(chk.get("t_start_tau", 0.0)) * tau
            hi = float(chk.get("t_end_tau", np.inf)) * tau
            hi = min(hi, trace.t[-1])
            val = trace.window_sup("y", lo, hi)
            results.append(CheckResult(chk.get("name", f"y_below_{idx}"),
                                       val < tol, val, tol))
        elif kind == "no_growth":
            early = [float(v) * tau for v in chk.get("early_tau", [0, 10])]
            late = [float(v) * tau for v in chk.get("late_tau", [40, 50])]
            factor = float(chk.get("factor", 1.05))
            e = trace.window_sup("y", *early)
            l = trace.window_sup("y", *late)
            val = l / e if e > 0 else (0.0 if l == 0 else np.inf)
            results.append(CheckResult(chk.get("name", f"no_growth_{idx}"),
                                       val <= factor, val, factor))
        elif kind == "finite":
            val = float(np.max(np.abs(trace.norm_Eprime)))
            bound = float(chk.get("bound", np.inf))
            ok = bool(np.isfinite(val)) and val <= bound
            results.append(CheckResult(chk.get("name", f"finite_{idx}"),
                                       ok, val, bound))
        else:
            raise ScenarioError(f"unknown check type {kind!r}", where)
    return results


def summarize(trace: TraceLog, bundle: RunBundle,
              check_results: list) -> dict:
    tau = bundle.resolved["tau"]
    summary = {
        "scenario": bundle.scenario.name,
        "resolved": bundle.resolved,
        "final_abs_y": abs(float(trace.y[-1])),
        "sup_abs_y": float(np.max(np.abs(trace.y))),
        "sup_norm_Eprime": float(np.max(trace.norm_Eprime)),
        "stability": bundle.report.to_dict() if bundle.report else None,
        "checks": [c.to_dict() for c in check_results],
        "all_checks_passed": all(c.passed for c in check_results),
        "divergence": None,
    }
    if not np.all(np.isnan(trace.obs_err)):
        summary["sup_obs_err"] = float(np.nanmax(trace.obs_err))
        summary["final_obs_err"] = float(trace.obs_err[-1])
    return summary
