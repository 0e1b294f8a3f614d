"""Command line front end: plan, simulate, validate, render.

Each subcommand is a thin orchestration layer over the library; anything
resembling a decision (margins, verdicts, distances) is computed in the
modules and merely formatted here.  Exit codes: 0 ok, 2 malformed input,
3 infeasible plan, 4 numerical failure, 5 validation verdict failed.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import reporting
from .errors import (InfeasibleError, NumericalError, ScenarioError,
                     ValidationFailure)
from .planner import solve
from .scenario import build_problem, discrete_model, load_scenario
from .simulate import build_report, simulate_nominal, simulate_true

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4
EXIT_VALIDATION = 5

OUT_DIR_ENV = "COVSTEER_OUT_DIR"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covsteer",
        description="plan, simulate, and validate distributionally robust "
                    "covariance-steering runs")
    sub = parser.add_subparsers(dest="command", required=True)

    plan = sub.add_parser("plan", help="solve the steering program")
    plan.add_argument("scenario", help="scenario JSON file")
    plan.add_argument("--out", default=None, help="output directory "
                      f"(default: ${OUT_DIR_ENV} or the working directory)")
    plan.add_argument("--gap-tol", type=float, default=None,
                      help="override the branch-and-bound gap tolerance")

    sim = sub.add_parser("simulate", help="run nominal and true ensembles "
                         "under a planned schedule")
    sim.add_argument("scenario", help="scenario JSON file")
    sim.add_argument("solution", help="solution JSON from 'plan'")
    sim.add_argument("--out", default=None)
    sim.add_argument("--paths", type=int, default=None,
                     help="number of Monte Carlo paths (default: scenario)")
    sim.add_argument("--seed", type=int, default=None,
                     help="master seed (default: scenario)")
    sim.add_argument("--no-l1", action="store_true",
                     help="disable the adaptive augmentation (ablation)")
    sim.add_argument("--jobs", type=int, default=1,
                     help="worker threads; never changes the output bytes")

    val = sub.add_parser("validate", help="judge a simulation report")
    val.add_argument("report", help="report JSON from 'simulate'")
    val.add_argument("--out", default=None)

    ren = sub.add_parser("render", help="draw the trajectory fan and the "
                         "per-step ambiguity chart")
    ren.add_argument("report", help="report JSON from 'simulate'")
    ren.add_argument("--out", default=None)
    return parser


def _out_dir(args) -> str:
    out = args.out or os.environ.get(OUT_DIR_ENV) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _cmd_plan(args) -> int:
    started = time.perf_counter()
    scenario = load_scenario(args.scenario)
    problem = build_problem(scenario)
    gap_tol = scenario.gap_tol if args.gap_tol is None else float(args.gap_tol)
    if gap_tol <= 0:
        raise ScenarioError("--gap-tol must be positive")
    solution = solve(problem, gap_tol=gap_tol)
    out = _out_dir(args)
    paths = reporting.write_solution(out, scenario, solution)
    reporting.update_timings(
        os.path.join(out, reporting.TIMINGS_FILE),
        {"plan_seconds": time.perf_counter() - started})

    worst = max((float(m.max()) for m in solution.face_margins
                 if m.size), default=-np.inf)
    print(f"plan: {scenario.name} (scenario {scenario.hash[:12]})")
    print(f"  objective      {solution.objective:.6g}")
    print(f"  nodes          {solution.stats.get('nodes', 0)}, "
          f"gap {solution.stats.get('gap', 0.0):.2e}")
    print(f"  worst margin   {worst:.3e}")
    print(f"  wrote          {paths['solution']}, {paths['schedule']}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    started = time.perf_counter()
    scenario = load_scenario(args.scenario)
    schedule, means, covs, sol_doc = reporting.read_solution(args.solution)
    if sol_doc["scenario"]["hash"] != scenario.hash:
        raise ScenarioError(
            "solution was planned for a different scenario (hash "
            f"{sol_doc['scenario']['hash'][:12]} vs {scenario.hash[:12]})",
            path=args.solution)
    if schedule.k_prime != scenario.k_prime or schedule.n != scenario.n:
        raise ScenarioError("solution dimensions disagree with the scenario",
                            path=args.solution)

    n_paths = scenario.n_paths if args.paths is None else args.paths
    if n_paths < 1:
        raise ScenarioError("--paths must be a positive integer")
    seed = scenario.master_seed if args.seed is None else args.seed
    if seed < 0:
        raise ScenarioError("--seed must be nonnegative")
    jobs = args.jobs
    if jobs < 1:
        raise ScenarioError("--jobs must be a positive integer")

    dm = discrete_model(scenario)
    nominal = simulate_nominal(dm, schedule, scenario.boundary, n_paths,
                               seed, jobs=jobs)
    l1 = None if args.no_l1 else scenario.l1_params
    true = simulate_true(scenario.model, scenario.uncertainty, schedule,
                         scenario.boundary_true, n_paths, seed,
                         l1_params=l1,
                         substeps_per_step=scenario.substeps_per_step,
                         jobs=jobs)
    report = build_report(true, nominal, means, covs, scenario.safe_set,
                          scenario.risk.delta_s, w2_paths=scenario.w2_paths)

    out = _out_dir(args)
    paths = reporting.write_report(out, scenario, report, true, nominal,
                                   seed, l1_enabled=not args.no_l1)
    reporting.update_timings(
        os.path.join(out, reporting.TIMINGS_FILE),
        {"simulate_seconds": time.perf_counter() - started})

    print(f"simulate: {scenario.name} (scenario {scenario.hash[:12]})")
    print(f"  paths          {n_paths}, seed {seed}, "
          f"l1 {'off' if args.no_l1 else 'on'}")
    print(f"  max violation  {report.violation_upper.max():.4f} "
          f"(Wilson upper, target {scenario.risk.delta_s})")
    print(f"  max W2         {report.w2_nominal.max():.4f} "
          f"(radius {scenario.rho.rho:.4f})")
    print(f"  wrote          {paths['report']}, {paths['steps']}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    bundle = reporting.read_report(args.report)
    predicates = reporting.evaluate_report(bundle)
    out = args.out or os.path.dirname(os.path.abspath(args.report))
    os.makedirs(out, exist_ok=True)
    reporting.write_json(os.path.join(out, reporting.RUNREPORT_FILE),
                         reporting.run_report_document(bundle, predicates))

    print(f"validate: {bundle.scenario_name} "
          f"(scenario {bundle.scenario_hash[:12]})")
    print(f"  {'predicate':<20} {'value':>12} {'bound':>12}  verdict")
    for pred in predicates:
        verdict = "pass" if pred.passed else "FAIL"
        print(f"  {pred.name:<20} {pred.value:>12.5g} {pred.bound:>12.5g}"
              f"  {verdict}")
    failed = [p.name for p in predicates if not p.passed]
    if failed:
        print(f"validation failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VALIDATION
    print("all predicates pass")
    return EXIT_OK


def _cmd_render(args) -> int:
    bundle = reporting.read_report(args.report)
    true_path = bundle.ensemble_files.get("true")
    if not true_path:
        raise ScenarioError("report carries no persisted true ensemble to "
                            "draw", path=args.report)
    ensemble, sidecar = reporting.read_ensemble(true_path)
    if sidecar.get("scenario_hash") != bundle.scenario_hash:
        raise ScenarioError("ensemble belongs to a different scenario",
                            path=true_path)
    out = _out_dir(args)
    fan = os.path.join(out, reporting.FAN_FILE)
    chart = os.path.join(out, reporting.W2_CHART_FILE)
    reporting.render_fan(bundle, ensemble, fan)
    reporting.render_w2_chart(bundle, chart)
    print(f"render: wrote {fan}, {chart}")
    return EXIT_OK


_COMMANDS = {
    "plan": _cmd_plan,
    "simulate": _cmd_simulate,
    "validate": _cmd_validate,
    "render": _cmd_render,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        for name, info in exc.diagnostic.get("regions", {}).items():
            print(f"  {name}: best uniform slack "
                  f"{info['max_dr_slack']:.4g}, most violated face "
                  f"{info['most_violated_face']}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValidationFailure as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    raise SystemExit(main())
