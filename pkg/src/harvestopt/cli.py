"""Command-line front end.

Subcommands: solve, simulate, sweep, verify, defaults, catalogue.  Every run
is fully specified by one TOML config; artifacts (JSON reports, CSV tables)
are byte-reproducible across runs, with wall-clock timings kept in a
separate timings.json.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .boundary import epsilon_sequence, solve_boundaries, sweep_c
from .config import DEFAULT_CONFIG_TOML, ProblemConfig, build_problem, load_config
from .diffusion import CATALOGUE_MODELS, classify_boundaries, fundamental_solutions
from .errors import ConfigError, SolverError
from .montecarlo import StrategyBG, run_simulation
from .payoffs import CATALOGUE_PAYOFFS
from .resolvent import theta_from_payoffs
from .valuefn import build_value_function, grid_residuals, verify_value_function

RESIDUAL_TOL = 1e-6
BOUNDARY_RESIDUAL_TOL = 1e-7


def _tolval(value, tol):
    return {"value": _jsonable(value), "tol": tol}


def _jsonable(v):
    if isinstance(v, float):
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
    if isinstance(v, np.floating):
        return _jsonable(float(v))
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    return v


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(v) for v in row) + "\n")


def _csv_cell(v):
    if isinstance(v, str):
        return v
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    x = float(v)
    if math.isnan(x):
        return "nan"
    return "%.17g" % x


class _Stages:
    """Per-stage wall-clock bookkeeping, reported outside the artifacts."""

    def __init__(self):
        self.timings = {}
        self.current = None

    def run(self, name, fn):
        t0 = time.perf_counter()
        self.current = name
        try:
            return fn()
        except SolverError as exc:
            exc._stage = name           # surfaced by main() with the stage name
            raise
        finally:
            self.timings[name] = time.perf_counter() - t0


def _solve_pipeline(cfg: ProblemConfig, stages: _Stages):
    d, p = stages.run("build", lambda: build_problem(cfg))
    pair = stages.run("fundamental_pair", lambda: fundamental_solutions(d, cfg.options))
    report = stages.run("classify_boundaries",
                        lambda: classify_boundaries(d, pair, cfg.options))
    theta = stages.run("theta", lambda: theta_from_payoffs(d, p, cfg.options))
    sol = stages.run("free_boundary",
                     lambda: solve_boundaries(d, pair, theta, p, cfg.options))
    w = stages.run("value_function",
                   lambda: build_value_function(d, pair, p, theta, sol,
                                                cfg.options, report))
    verification = stages.run("verification",
                              lambda: verify_value_function(w, sol, cfg.options, report))
    return d, p, pair, report, theta, sol, w, verification


def _run_report(cfg, sol, report, w, verification):
    opt = cfg.options
    st = sol.structural
    out = {
        "config": {
            "model": {"tag": cfg.model_tag, **cfg.model_params},
            "payoff": {"tag": cfg.payoff_tag, **cfg.payoff_params},
            "c": cfg.fixed_cost, "x0": cfg.x0,
        },
        "case": sol.case_tag,
        "boundary_classification": {"at_zero": report.at_zero,
                                    "at_infinity": report.at_infinity},
        "structural": {
            "xi": _tolval(st.xi, opt.xi_rtol),
            "x_lower": _tolval(st.x_lower, opt.root_rtol),
            "x_upper": _tolval(st.x_upper, opt.root_rtol),
            "l0": _tolval(st.l0, opt.limit_rtol),
            "q_infinity": _tolval(st.q_infinity, opt.limit_rtol),
            "theta_ratio_zero": _tolval(st.theta_ratio_zero, opt.limit_rtol),
            "theta_ratio_inf": _tolval(st.theta_ratio_inf, opt.limit_rtol),
        },
        "thresholds": {
            "c_star": _tolval(sol.c_star, opt.limit_rtol),
            "c_circ": _tolval(sol.c_circ, opt.limit_rtol),
        },
        "k_infinity": _tolval(sol.k_infinity, opt.k_inf_rtol),
        "boundaries": {
            "gamma_star": _tolval(sol.gamma_star, opt.root_rtol),
            "beta_star": _tolval(sol.beta_star, opt.root_rtol),
            "beta_circ": _tolval(sol.beta_circ, opt.root_rtol),
        },
        "system_residuals": [_tolval(r, BOUNDARY_RESIDUAL_TOL) for r in sol.residuals],
        "value_at_x0": _tolval(float(w(np.asarray(cfg.x0))), RESIDUAL_TOL),
        "verification": verification,
    }
    if sol.case_tag in ("II", "IV"):
        out["epsilon_sequence"] = epsilon_sequence(sol, 4, gamma=cfg.x0
                                                   if sol.case_tag == "IV" else None)
    return out


def _residuals_ok(sol, verification):
    ok = verification["ode_residual_max"] <= RESIDUAL_TOL
    ok &= verification["intervention_residual_max"] <= RESIDUAL_TOL
    ok &= all(r <= BOUNDARY_RESIDUAL_TOL for r in sol.residuals)
    ok &= verification["c1_gap"] <= 1e-7 or not math.isfinite(verification["c1_gap"])
    for gap in verification["smooth_fit"].values():
        ok &= gap <= RESIDUAL_TOL
    return bool(ok)


def cmd_solve(cfg: ProblemConfig) -> int:
    stages = _Stages()
    d, p, pair, report, theta, sol, w, verification = _solve_pipeline(cfg, stages)
    run_report = _run_report(cfg, sol, report, w, verification)

    os.makedirs(cfg.out_dir, exist_ok=True)
    if cfg.out_format in ("json", "both"):
        _write_json(os.path.join(cfg.out_dir, "report.json"), run_report)
    if cfg.out_format in ("csv", "both"):
        grid, ode, inter = grid_residuals(w, sol, cfg.options)
        w_vals = w(grid)
        rows = list(zip(grid, w_vals, ode, inter))
        _write_csv(os.path.join(cfg.out_dir, "value_function.csv"),
                   ["x", "w", "ode_residual", "intervention_residual"], rows)
    _write_json(os.path.join(cfg.out_dir, "timings.json"), stages.timings)

    print(f"case {sol.case_tag}; outputs in {cfg.out_dir}")
    _print_summary(run_report)
    return 0 if _residuals_ok(sol, verification) else 1


def _print_summary(run_report):
    rows = []
    for key in ("gamma_star", "beta_star", "beta_circ"):
        v = run_report["boundaries"][key]["value"]
        if v is not None:
            rows.append((key, v))
    for key in ("c_star", "c_circ"):
        rows.append((key, run_report["thresholds"][key]["value"]))
    rows.append(("k_infinity", run_report["k_infinity"]["value"]))
    rows.append(("w(x0)", run_report["value_at_x0"]["value"]))
    ver = run_report["verification"]
    rows.append(("ode_residual_max", ver["ode_residual_max"]))
    rows.append(("intervention_residual_max", ver["intervention_residual_max"]))
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"  {k:<{width}}  {v}")


def cmd_simulate(cfg: ProblemConfig) -> int:
    stages = _Stages()
    if cfg.simulate_beta is not None and cfg.simulate_gamma is not None:
        d, p = stages.run("build", lambda: build_problem(cfg))
        pair = stages.run("fundamental_pair",
                          lambda: fundamental_solutions(d, cfg.options))
        strat = StrategyBG(beta=cfg.simulate_beta, gamma=cfg.simulate_gamma)
        sol = None
    else:
        d, p, pair, report, theta, sol, w, verification = _solve_pipeline(cfg, stages)
        if sol.case_tag == "I":
            strat = StrategyBG(beta=sol.beta_star, gamma=sol.gamma_star)
        elif sol.case_tag == "II":
            strat = StrategyBG(beta=sol.beta_circ,
                               gamma=epsilon_sequence(sol, 3)[-1][1])
        else:
            raise ConfigError(
                f"case {sol.case_tag} has no finite strategy; supply [simulate] "
                "beta and gamma explicitly")

    ests = stages.run("monte_carlo", lambda: run_simulation(
        d, p, strat, cfg.x0, cfg.n_paths, cfg.dt, cfg.seed, pair=pair,
        threads=cfg.threads))

    out = {
        "strategy": {"beta": strat.beta, "gamma": strat.gamma},
        "x0": cfg.x0, "dt": cfg.dt, "n_paths": cfg.n_paths, "seed": cfg.seed,
        "estimates": {
            name: {"mean": e.mean, "std_error": e.std_error,
                   "n_paths": e.n_paths, "oracle": e.analytic_oracle,
                   "z_score": e.z_score}
            for name, e in ests.items()
        },
    }
    os.makedirs(cfg.out_dir, exist_ok=True)
    if cfg.out_format in ("json", "both"):
        _write_json(os.path.join(cfg.out_dir, "simulation.json"), out)
    if cfg.trace_paths > 0:
        from .montecarlo import simulate_path
        rows = []
        for i in range(cfg.trace_paths):
            rec = simulate_path(d, strat, cfg.x0, cfg.dt, cfg.seed, i, p)
            rows.extend((i, t, s) for t, s in zip(rec.times, rec.states))
        _write_csv(os.path.join(cfg.out_dir, "paths.csv"),
                   ["path", "t", "x"], rows)
    _write_json(os.path.join(cfg.out_dir, "timings.json"), stages.timings)

    worst = 0.0
    for name, e in ests.items():
        line = f"  {name}: {e.mean:.6g} +- {e.std_error:.2g}"
        if e.analytic_oracle is not None:
            line += f"  (oracle {e.analytic_oracle:.6g}, z = {e.z_score:+.2f})"
            worst = max(worst, abs(e.z_score))
        print(line)
    print(f"outputs in {cfg.out_dir}")
    return 0 if worst <= 5.0 else 1


def cmd_sweep(cfg: ProblemConfig) -> int:
    if cfg.sweep_c_min is None or cfg.sweep_c_max is None or cfg.sweep_steps is None:
        raise ConfigError("sweep requires [sweep] c_min, c_max and steps")
    if not (cfg.sweep_c_min < cfg.sweep_c_max and cfg.sweep_steps >= 2):
        raise ConfigError("sweep requires c_min < c_max and steps >= 2")
    stages = _Stages()
    d, p = stages.run("build", lambda: build_problem(cfg))
    pair = stages.run("fundamental_pair", lambda: fundamental_solutions(d, cfg.options))
    stages.run("classify_boundaries", lambda: classify_boundaries(d, pair, cfg.options))
    theta = stages.run("theta", lambda: theta_from_payoffs(d, p, cfg.options))
    grid = np.geomspace(cfg.sweep_c_min, cfg.sweep_c_max, cfg.sweep_steps)
    rows = stages.run("sweep", lambda: sweep_c(d, pair, theta, p, grid, cfg.options,
                                               threads=cfg.threads))

    os.makedirs(cfg.out_dir, exist_ok=True)
    table = [(r.c, r.case_tag, r.gamma, r.beta, r.c_star, r.c_circ,
              r.residual_1, r.residual_2, r.error) for r in rows]
    _write_csv(os.path.join(cfg.out_dir, "sweep.csv"),
               ["c", "case", "gamma", "beta", "c_star", "c_circ",
                "residual_1", "residual_2", "error"], table)
    _write_json(os.path.join(cfg.out_dir, "timings.json"), stages.timings)

    cases = [r.case_tag or "err" for r in rows]
    print(f"sweep over {len(rows)} costs: cases {' '.join(cases)}")
    print(f"outputs in {cfg.out_dir}")
    return 0 if all(not r.error for r in rows) else 1


def cmd_verify(cfg: ProblemConfig) -> int:
    stages = _Stages()
    d, p, pair, report, theta, sol, w, verification = _solve_pipeline(cfg, stages)
    os.makedirs(cfg.out_dir, exist_ok=True)
    payload = {
        "case": sol.case_tag,
        "verification": verification,
        "system_residuals": list(sol.residuals),
        "tolerances": {"residual": RESIDUAL_TOL,
                       "system_residual": BOUNDARY_RESIDUAL_TOL},
        "passed": _residuals_ok(sol, verification),
    }
    _write_json(os.path.join(cfg.out_dir, "verification.json"), payload)
    _write_json(os.path.join(cfg.out_dir, "timings.json"), stages.timings)
    print(f"case {sol.case_tag}: verification "
          f"{'passed' if payload['passed'] else 'FAILED'}; outputs in {cfg.out_dir}")
    return 0 if payload["passed"] else 1


def cmd_defaults(_cfg=None) -> int:
    sys.stdout.write(DEFAULT_CONFIG_TOML)
    return 0


def cmd_catalogue(_cfg=None) -> int:
    print("models:")
    for tag, params in sorted(CATALOGUE_MODELS.items()):
        print(f"  {tag}: parameters {', '.join(params)}")
    print("payoffs:")
    for tag, params in sorted(CATALOGUE_PAYOFFS.items()):
        print(f"  {tag}: parameters {', '.join(params)}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="harvestopt",
        description="Solve and validate one-sided impulse-control (optimal "
                    "harvesting) problems for linear diffusions.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "simulate", "sweep", "verify"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="TOML problem config")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--threads", type=int, help="worker threads")
        sp.add_argument("--seed", type=int, help="Monte Carlo seed")
        sp.add_argument("--format", choices=("json", "csv", "both"),
                        help="artifact formats")
        sp.add_argument("--trace", type=int, dest="trace",
                        help="write full traces for this many paths (simulate)")
    sub.add_parser("defaults")
    sub.add_parser("catalogue")
    args = parser.parse_args(argv)

    if args.command == "defaults":
        return cmd_defaults()
    if args.command == "catalogue":
        return cmd_catalogue()

    try:
        cfg = load_config(args.config)
        if args.out:
            cfg.out_dir = args.out
        if args.threads:
            cfg.threads = args.threads
        if args.seed is not None:
            cfg.seed = args.seed
        if args.format:
            cfg.out_format = args.format
        if args.trace is not None:
            cfg.trace_paths = args.trace
        handler = {"solve": cmd_solve, "simulate": cmd_simulate,
                   "sweep": cmd_sweep, "verify": cmd_verify}[args.command]
        return handler(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        stage = getattr(exc, "_stage", None)
        where = f" in stage {stage}" if stage else ""
        print(f"{type(exc).__name__}{where}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
