"""Scenario-driven command line: simulate, gain, kernels, nde, sweep.

Exit codes: 0 success (all declared checks pass), 2 malformed scenario,
3 numerical divergence (last valid time reported), 4 infeasible gain
design. Outputs land under --out: trace.csv, summary.json, plots.svg,
kernels/*.csv, roots.csv, sweep.csv.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import (AssumptionError, ConfigurationError, DivergenceError,
                     HypbcError, ParameterError, ScenarioError)
from .kernels import (apply_inverse, apply_transform, check_assumption3,
                      write_kernels_csv)
from .model import SpatialGrid
from .nde import (FeedbackGains, NDEHistory, classify_window_ratio,
                  simulate_nde, spectral_abscissa, stability_report,
                  tau0_oracle)
from .plant import run_closed_loop
from .scenario import (build_bundle, evaluate_checks, load_raw,
                       load_scenario, parse_scenario, summarize)
from .svgplot import write_trace_svg

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_DIVERGED = 3
EXIT_INFEASIBLE = 4


def _clean(obj):
    """Map non-finite floats to None/strings so the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if np.isnan(v):
            return None
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True)


def _json_dump(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(_dumps(obj) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def cmd_simulate(args) -> int:
    out_dir = Path(args.out)
    try:
        scn = load_scenario(args.scenario)
        bundle = build_bundle(scn)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (ParameterError, ConfigurationError, AssumptionError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    try:
        trace = run_closed_loop(bundle.setup)
    except DivergenceError as exc:
        print(f"diverged: {exc} (last valid time "
              f"{exc.last_valid_time:g})", file=sys.stderr)
        _json_dump({"scenario": bundle.scenario.name,
                    "divergence": {"t": exc.last_valid_time},
                    "resolved": bundle.resolved}, out_dir / "summary.json")
        return EXIT_DIVERGED
    results = evaluate_checks(bundle.checks, trace, bundle.resolved["tau"])
    summary = summarize(trace, bundle, results)
    trace.to_csv(out_dir / "trace.csv")
    _json_dump(summary, out_dir / "summary.json")
    if not args.no_plots:
        write_trace_svg(out_dir / "plots.svg", trace)
    print(_dumps(summary))
    return EXIT_OK if summary["all_checks_passed"] else 1


def _gains_from_args(args):
    """Inline gain design assumes a zero-coupling plant (unit boundary
    factor); scenario files get the solved factor instead."""
    from .model import SystemParams
    grid = SpatialGrid.make(16)
    params = SystemParams.from_coefficients(
        grid, 1.0, 1.0, 0.0, 0.0, q=args.q, rho=args.rho)
    if params.rho * params.q >= 1.0:
        raise ParameterError(f"rho*q = {params.rho * params.q:g} >= 1")
    margin_sum = abs(params.rho * params.q) + abs(args.rho_tilde * params.q)
    if margin_sum >= 1.0:
        raise ParameterError(
            f"|rho q| + |rho_tilde q| = {margin_sum:g} >= 1")
    k1 = (args.rho - args.rho_tilde) * args.q
    tau0_target = args.tau / args.margin
    k2_mag = float(np.sqrt(1.0 - k1 * k1) * np.arccos(k1) / tau0_target)
    k_i = -np.sign(args.q) * k2_mag / abs(args.q)
    gains = FeedbackGains(k1=k1, k2=-k2_mag, tau=args.tau)
    return k_i, gains


def cmd_gain(args) -> int:
    try:
        if args.scenario:
            scn = load_scenario(args.scenario)
            bundle = build_bundle(scn)
            report = bundle.report
            k_i = bundle.resolved["k_I"]
        else:
            for name in ("q", "rho", "tau"):
                if getattr(args, name) is None:
                    raise ParameterError(f"--{name} required without a "
                                         f"scenario file")
            k_i, gains = _gains_from_args(args)
            report = stability_report(gains, scan=not args.no_scan)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (ParameterError, ConfigurationError, AssumptionError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    payload = report.to_dict()
    payload["k_I"] = k_i
    payload["tau0_oracle"] = tau0_oracle(report.k1, report.k2)
    print(_dumps(payload))
    return EXIT_OK if report.stable else EXIT_INFEASIBLE


def cmd_kernels(args) -> int:
    out_dir = Path(args.out)
    try:
        scn = load_scenario(args.scenario)
        bundle = build_bundle(scn)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (ParameterError, ConfigurationError, AssumptionError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    setup = bundle.setup
    grid, params = setup.grid, setup.params
    fields = dict(setup.kernels.fields())
    fields.update(setup.lset.fields())
    if setup.okernels is not None:
        fields.update(setup.okernels.fields())
    write_kernels_csv(fields, grid, out_dir / "kernels")
    w = setup.weights
    with open(out_dir / "kernels" / "weights.csv", "w", encoding="utf-8") as fh:
        fh.write("x,l1,l2\n")
        for x, l1, l2 in zip(grid.nodes, w.l1, w.l2):
            fh.write(f"{x:.17g},{l1:.17g},{l2:.17g}\n")
    info = {
        "iterations": setup.kernels.iterations,
        "final_update": setup.kernels.final_update,
        "boundary_factor": w.boundary_factor,
        "assumption3_value": check_assumption3(setup.lset, params.q, grid),
    }
    if args.check:
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(10):
            u = rng.uniform(-1, 1, grid.n_cells + 1)
            v = rng.uniform(-1, 1, grid.n_cells + 1)
            a, b = apply_transform(u, v, setup.kernels, grid)
            u2, v2 = apply_inverse(a, b, setup.lset, grid)
            worst = max(worst, float(np.max(np.abs(u2 - u))),
                        float(np.max(np.abs(v2 - v))))
        info["round_trip_error"] = worst
        info["round_trip_bound"] = 5.0 * grid.h
        info["identity_gap"] = abs(info["boundary_factor"]
                                   - info["assumption3_value"])
        info["checks_passed"] = bool(worst <= 5.0 * grid.h
                                     and info["identity_gap"] <= 10.0 * grid.h)
    _json_dump(info, out_dir / "kernels" / "summary.json")
    print(_dumps(info))
    if args.check and not info["checks_passed"]:
        return 1
    return EXIT_OK


def cmd_nde(args) -> int:
    try:
        if args.scenario:
            scn = load_scenario(args.scenario)
            bundle = build_bundle(scn)
            report = bundle.report
            gains = FeedbackGains(k1=report.k1, k2=report.k2, tau=report.tau)
        else:
            for name in ("k1", "k2", "tau"):
                if getattr(args, name) is None:
                    raise ParameterError(f"--{name} required without a "
                                         f"scenario file")
            gains = FeedbackGains(k1=args.k1, k2=args.k2, tau=args.tau)
            report = stability_report(gains, scan=True)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (ParameterError, ConfigurationError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    out_dir = Path(args.out)
    scan = spectral_abscissa(gains)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "roots.csv", "w", encoding="utf-8") as fh:
        fh.write("re,im\n")
        for r in scan.roots:
            fh.write(f"{r.real:.17g},{r.imag:.17g}\n")
    payload = report.to_dict()
    payload["n_roots_found"] = int(scan.roots.size)
    if args.simulate:
        m = int(args.steps_per_tau)
        dt = gains.tau / m
        th = np.linspace(-gains.tau, 0.0, m + 1)
        z = np.full(m + 1, args.history_const)
        zd = np.zeros(m + 1)
        trace = simulate_nde(gains, None, NDEHistory(z=z, zdot=zd),
                             args.horizon_tau * gains.tau, dt)
        ratio, label = classify_window_ratio(trace, gains.tau)
        payload["window_ratio"] = ratio
        payload["classification"] = label
        with open(out_dir / "nde_trace.csv", "w", encoding="utf-8") as fh:
            fh.write("t,z,zdot\n")
            for t, z_, zd_ in zip(trace.t, trace.z, trace.zdot):
                fh.write(f"{t:.17g},{z_:.17g},{zd_:.17g}\n")
    _json_dump(payload, out_dir / "report.json")
    print(_dumps(payload))
    return EXIT_OK


def _set_path(raw: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def _run_sweep_point(job) -> dict:
    idx, raw, axis_names, values, _ = job
    row = {"index": idx}
    row.update({name: val for name, val in zip(axis_names, values)})
    try:
        bundle = build_bundle(parse_scenario(raw, f"sweep[{idx}]"))
        trace = run_closed_loop(bundle.setup)
        tau = bundle.resolved["tau"]
        results = evaluate_checks(bundle.checks, trace, tau)
        row["status"] = "ok"
        row["sup_abs_y"] = float(np.max(np.abs(trace.y)))
        row["final_abs_y"] = abs(float(trace.y[-1]))
        row["checks_passed"] = all(c.passed for c in results)
        horizon = trace.t[-1]
        if horizon >= 2 * tau:
            w0 = trace.window_sup("y", horizon - 2 * tau, horizon - tau)
            w1 = trace.window_sup("y", horizon - tau, horizon)
            row["y_window_ratio"] = w1 / w0 if w0 > 0 else float("nan")
            if not np.all(np.isnan(trace.obs_err)):
                o0 = trace.window_sup("obs_err", horizon - 2 * tau,
                                      horizon - tau)
                o1 = trace.window_sup("obs_err", horizon - tau, horizon)
                row["obs_window_ratio"] = o1 / o0 if o0 > 0 else float("nan")
    except DivergenceError as exc:
        row["status"] = "diverged"
        row["last_valid_time"] = exc.last_valid_time
    except HypbcError as exc:
        row["status"] = f"error: {exc}"
    return row


def cmd_sweep(args) -> int:
    out_dir = Path(args.out)
    try:
        spec_path = Path(args.sweep_spec)
        spec = load_raw(spec_path)
        template_ref = spec.get("template")
        if template_ref:
            template = load_scenario(spec_path.parent / template_ref).raw
        elif "scenario" in spec:
            template = spec["scenario"]
        else:
            raise ScenarioError("sweep needs 'template' or inline "
                                "'scenario'", "template")
        axes = spec.get("axes", [])
        for i, ax in enumerate(axes):
            if "path" not in ax or "values" not in ax:
                raise ScenarioError("axis needs 'path' and 'values'",
                                    f"axes[{i}]")
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA

    names = [ax["path"] for ax in axes]
    grids = [list(ax["values"]) for ax in axes]
    combos = [[]]
    for vals in grids:
        combos = [c + [v] for c in combos for v in vals]

    jobs = []
    for idx, vals in enumerate(combos):
        raw = copy.deepcopy(template)
        for name, val in zip(names, vals):
            _set_path(raw, name, val)
        jobs.append((idx, raw, names, vals, None))

    workers = int(os.environ.get("HYPBC_WORKERS",
                                 min(4, os.cpu_count() or 1)))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_sweep_point, jobs))
    else:
        rows = [_run_sweep_point(j) for j in jobs]
    rows.sort(key=lambda r: r["index"])

    out_dir.mkdir(parents=True, exist_ok=True)
    cols = sorted({k for row in rows for k in row},
                  key=lambda k: (k != "index", k))
    with open(out_dir / "sweep.csv", "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(row.get(c)) for c in cols) + "\n")
    aggregate = {"points": rows,
                 "all_ok": all(r.get("status") == "ok" for r in rows)}
    _json_dump(aggregate, out_dir / "aggregate.json")
    print(_dumps({"points": len(rows), "all_ok": aggregate["all_ok"]}))
    if spec.get("require_all_pass") and not all(
            r.get("checks_passed", True) and r.get("status") == "ok"
            for r in rows):
        return 1
    return EXIT_OK


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="hypbc",
        description="Backstepping boundary control of 2x2 hyperbolic "
                    "systems: simulation, gain design, kernels, delay "
                    "analysis, sweeps.")
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a closed-loop scenario")
    sim.add_argument("scenario")
    sim.add_argument("--out", default="out")
    sim.add_argument("--no-plots", action="store_true")
    sim.set_defaults(func=cmd_simulate)

    gain = sub.add_parser("gain", help="design the integral gain")
    gain.add_argument("scenario", nargs="?")
    gain.add_argument("--q", type=float)
    gain.add_argument("--rho", type=float)
    gain.add_argument("--rho-tilde", type=float, default=0.0,
                      dest="rho_tilde")
    gain.add_argument("--tau", type=float)
    gain.add_argument("--margin", type=float, default=0.5)
    gain.add_argument("--no-scan", action="store_true")
    gain.set_defaults(func=cmd_gain)

    ker = sub.add_parser("kernels", help="solve and export kernels")
    ker.add_argument("scenario")
    ker.add_argument("--out", default="out")
    ker.add_argument("--check", action="store_true")
    ker.set_defaults(func=cmd_kernels)

    nde = sub.add_parser("nde", help="delay-equation stability analysis")
    nde.add_argument("scenario", nargs="?")
    nde.add_argument("--k1", type=float)
    nde.add_argument("--k2", type=float)
    nde.add_argument("--tau", type=float)
    nde.add_argument("--out", default="out")
    nde.add_argument("--simulate", action="store_true")
    nde.add_argument("--horizon-tau", type=float, default=40.0,
                     dest="horizon_tau")
    nde.add_argument("--steps-per-tau", type=int, default=200,
                     dest="steps_per_tau")
    nde.add_argument("--history-const", type=float, default=1.0,
                     dest="history_const")
    nde.set_defaults(func=cmd_nde)

    sw = sub.add_parser("sweep", help="parameter sweep over scenarios")
    sw.add_argument("sweep_spec")
    sw.add_argument("--out", default="out")
    sw.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
