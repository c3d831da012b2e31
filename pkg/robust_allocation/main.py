"""
Main Entry Point for the Distributed Robust Allocation Solver

Subcommands:
- run: integrate the swarm dynamics and write trajectory.csv / summary.json
- check: certify a state dump (KKT, equilibrium, consensus, feasibility)
- oracle: solve the centralized reference problem
- dump-demo: print the embedded demo instance as JSON
- validate: report the standing-assumption findings of a problem

Run with: python -m robust_allocation <subcommand> [options]
"""

import argparse
import json
import os
import sys
import time

from absl import logging

from robust_allocation.certification import certify, equilibrium_residual, verdict
from robust_allocation.config import (
    BUILTIN_DEMO,
    CHECK_TOLERANCE,
    CROSS_VALIDATION_TOLERANCE,
    DEFAULT_DT,
    DEFAULT_RECORD_EVERY,
    DEFAULT_T_END,
    EXIT_NUMERICAL_FAILURE,
    EXIT_OK,
    EXIT_USAGE_ERROR,
    FINAL_STATE_FILE,
    FORMAT_VERSION,
    ORACLE_FILE,
    ORACLE_MAX_ITER,
    ORACLE_METHODS,
    ORACLE_STATE_FILE,
    ORACLE_TOLERANCE,
    SUMMARY_FILE,
    TRAJECTORY_FILE,
)
from robust_allocation.dynamics_engine import IntegratorConfig, default_init, equilibrium_from_oracle, simulate
from robust_allocation.errors import (
    ConfigError,
    DimensionMismatchError,
    DivergenceError,
    OracleConvergenceError,
    ProblemValidationError,
    StateValidationError,
)
from robust_allocation.problem_io import (
    dumps,
    dumps_problem,
    load_state,
    open_problem,
    oracle_to_dict,
    state_to_dict,
    write_json,
)
from robust_allocation.problem_model import demo_problem, validate_problem
from robust_allocation.reference_oracle import centralized_solve, cross_validate
from robust_allocation.report_view import (
    format_certification,
    format_cross_validation,
    format_positions,
    format_validation,
)
from robust_allocation.run_log import RunLog


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors map to the package's usage exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"[ERROR] {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE_ERROR)


def build_parser():
    parser = _Parser(prog="robust_allocation", description="Distributed robust resource allocation solver")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="integrate the swarm dynamics")
    run.add_argument("--problem", default=BUILTIN_DEMO, help=f"problem JSON path or {BUILTIN_DEMO}")
    run.add_argument("--dt", type=float, default=DEFAULT_DT)
    run.add_argument("--t-end", type=float, default=DEFAULT_T_END)
    run.add_argument("--record-every", type=int, default=DEFAULT_RECORD_EVERY)
    run.add_argument("--early-stop-tol", type=float, default=None)
    run.add_argument("--out", default="out")
    run.add_argument("--dump-state", action="store_true", help=f"also write {FINAL_STATE_FILE}")
    run.add_argument("--tol", type=float, default=None, help="exit nonzero unless the final KKT residuals pass")
    run.add_argument("--oracle", action="store_true",
                     help="solve centrally first; per-step Lyapunov reference and cross-validation")

    check = sub.add_parser("check", help="certify a state dump")
    check.add_argument("state", help="state JSON dump")
    check.add_argument("--problem", default=BUILTIN_DEMO)
    check.add_argument("--tol", type=float, default=CHECK_TOLERANCE)

    oracle = sub.add_parser("oracle", help="solve the centralized reference problem")
    oracle.add_argument("--problem", default=BUILTIN_DEMO)
    oracle.add_argument("--tol", type=float, default=ORACLE_TOLERANCE)
    oracle.add_argument("--max-iter", type=int, default=ORACLE_MAX_ITER)
    oracle.add_argument("--method", choices=ORACLE_METHODS, default=ORACLE_METHODS[0])
    oracle.add_argument("--out", default=None, help=f"directory for {ORACLE_FILE} and {ORACLE_STATE_FILE}")

    sub.add_parser("dump-demo", help="print the embedded demo instance")

    validate = sub.add_parser("validate", help="check standing assumptions of a problem")
    validate.add_argument("--problem", default=BUILTIN_DEMO)
    return parser


def _load_validated(source):
    problem = open_problem(source)
    report = validate_problem(problem)
    for finding in report.warnings:
        print(f"Warning: {finding.code} at {finding.field}: {finding.message}", file=sys.stderr)
    report.raise_if_failed()
    return problem


def cmd_run(args):
    """Integrate the dynamics and write the trajectory, summary and optional state dump."""
    problem = _load_validated(args.problem)
    config = IntegratorConfig(args.dt, args.t_end, args.record_every, args.early_stop_tol)
    log = RunLog(args.out)
    log.log_event("run_started", problem=problem.name, dt=config.dt, t_end=config.t_end)

    print(f"[RUN] {problem.name}: n={problem.n} m={problem.m} q={problem.q} dt={config.dt} t_end={config.t_end}")

    # 1) Optional oracle: Lyapunov reference for every step and cross-validation target
    solution = reference = None
    if args.oracle:
        try:
            solution = centralized_solve(problem)
        except OracleConvergenceError as exc:
            log.log_event("oracle_failed", iterations=exc.iterations, method=exc.method)
            print(f"[ERROR] {exc}", file=sys.stderr)
            return EXIT_NUMERICAL_FAILURE
        reference = equilibrium_from_oracle(problem, solution)
        log.log_event("oracle_completed", iterations=solution.iterations, objective=solution.objective_value)

    def _progress(t, state, lyapunov):
        value = "n/a" if lyapunov is None else f"{lyapunov:.4e}"
        print(f"[RUN] t={t:9.2f} | eq_residual={equilibrium_residual(problem, state):.4e} | V={value}")

    started = time.time()
    try:
        trajectory = simulate(problem, default_init(problem), config, reference=reference, progress=_progress)
    except DivergenceError as exc:
        log.log_event("divergence", block=exc.block, t=exc.t)
        print(f"[ERROR] divergence in block {exc.block} at t={exc.t}", file=sys.stderr)
        return EXIT_NUMERICAL_FAILURE
    wall_time = time.time() - started

    # 2) Artifacts
    final = trajectory.final_state
    trajectory.write_csv(os.path.join(args.out, TRAJECTORY_FILE))
    if args.dump_state:
        write_json(os.path.join(args.out, FINAL_STATE_FILE), state_to_dict(final, label="final_state"))
    report = certify(problem, final)
    passed, flagged = verdict(report, args.tol if args.tol is not None else CHECK_TOLERANCE)
    summary = {
        "format_version": FORMAT_VERSION,
        "problem": problem.name,
        "final_x": final.x.tolist(),
        "t_final": float(trajectory.times[-1]),
        "snapshots": len(trajectory),
        "early_stopped": trajectory.early_stopped,
        "wall_time_s": wall_time,
        "certification": report.to_dict(),
        "flagged": flagged,
        "block_sup_norms": trajectory.block_sup_norms(),
    }
    agreement = None
    if solution is not None:
        agreement = cross_validate(final, solution, CROSS_VALIDATION_TOLERANCE, problem=problem)
        steps = trajectory.step_lyapunov
        summary["cross_validation"] = {
            "passed": agreement.passed,
            "max_gap": agreement.max_gap,
            "worst_agent": agreement.worst_agent + 1,
            "worst_coordinate": agreement.worst_coordinate + 1,
            "objective_gap": agreement.objective_gap,
            "tolerance": CROSS_VALIDATION_TOLERANCE,
        }
        summary["lyapunov"] = {
            "reference": "oracle_equilibrium",
            "max_step_increment": steps.max_increment(),
            "positive_steps": steps.positive_increments(),
        }
    write_json(os.path.join(args.out, SUMMARY_FILE), summary)
    log.log_event("run_completed", wall_time_s=wall_time, flagged=flagged)

    # 3) Console summary
    print(f"[RUN] finished in {wall_time:.1f}s, {len(trajectory)} snapshots")
    print(format_positions(final.x))
    if agreement is not None:
        print(format_cross_validation(agreement, CROSS_VALIDATION_TOLERANCE))
    if args.tol is not None and not passed:
        print(f"[RUN] final state fails tolerance {args.tol:g}: {', '.join(flagged)}")
        return EXIT_NUMERICAL_FAILURE
    if agreement is not None and not agreement.passed:
        return EXIT_NUMERICAL_FAILURE
    return EXIT_OK


def cmd_check(args):
    """Certify a state dump; exit 0 iff every residual is within tolerance."""
    problem = _load_validated(args.problem)
    state = load_state(problem, args.state)
    report = certify(problem, state)
    passed, flagged = verdict(report, args.tol)
    print(dumps({"format_version": FORMAT_VERSION, "passed": passed, "flagged": flagged, **report.to_dict()}), end="")
    print(format_certification(report, args.tol))
    print(f"[CHECK] {'pass' if passed else 'FAIL: ' + ', '.join(flagged)}")
    return EXIT_OK if passed else EXIT_NUMERICAL_FAILURE


def cmd_oracle(args):
    """Solve centrally; print the solution JSON and optionally write it with a state dump."""
    problem = _load_validated(args.problem)
    log = RunLog(args.out) if args.out else None
    try:
        solution = centralized_solve(problem, tol=args.tol, max_iter=args.max_iter, method=args.method)
    except OracleConvergenceError as exc:
        if log:
            log.log_event("oracle_failed", iterations=exc.iterations, method=exc.method)
        print(f"[ERROR] {exc}", file=sys.stderr)
        return EXIT_NUMERICAL_FAILURE
    payload = oracle_to_dict(solution)
    print(dumps(payload), end="")
    if args.out:
        write_json(os.path.join(args.out, ORACLE_FILE), payload)
        state = equilibrium_from_oracle(problem, solution)
        write_json(os.path.join(args.out, ORACLE_STATE_FILE), state_to_dict(state, label="oracle_equilibrium"))
        log.log_event("oracle_completed", iterations=solution.iterations, objective=solution.objective_value)
    print(f"[ORACLE] converged in {solution.iterations} iterations, objective {solution.objective_value:.6f}", file=sys.stderr)
    return EXIT_OK


def cmd_dump_demo(args):
    sys.stdout.write(dumps_problem(demo_problem()))
    return EXIT_OK


def cmd_validate(args):
    report = validate_problem(open_problem(args.problem))
    print(format_validation(report))
    return EXIT_OK if report.passed else EXIT_USAGE_ERROR


COMMANDS = {
    "run": cmd_run,
    "check": cmd_check,
    "oracle": cmd_oracle,
    "dump-demo": cmd_dump_demo,
    "validate": cmd_validate,
}


def main(argv=None):
    """Parse arguments, dispatch, and map errors to exit codes."""
    args = build_parser().parse_args(argv)
    logging.set_verbosity(logging.WARNING)
    try:
        return COMMANDS[args.command](args)
    except (ProblemValidationError, ConfigError, DimensionMismatchError, StateValidationError) as exc:
        print(f"[ERROR] {exc}", file=sys.stderr)
        return EXIT_USAGE_ERROR
    except (OSError, json.JSONDecodeError) as exc:
        print(f"[ERROR] {exc}", file=sys.stderr)
        return EXIT_USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
