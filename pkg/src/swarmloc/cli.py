"""Command line: simulate, solve, run and sweep.

Exit codes: 0 success, 2 a solver failed or stayed ambiguous (the report is
still written), 1 usage or I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys

from .harness import (
    AGGREGATE_FIELDS,
    METHODS,
    SWEEP_AXES,
    TABLE_FIELDS,
    RunOptions,
    SweepSpec,
    outcome_failed,
    report_json,
    run_rounds,
    run_scenario,
    run_sweep,
    write_csv,
)
from .sim import (
    ScenarioConfig,
    generate_trajectories,
    load_config,
    read_observation_log,
    synthesize_observations,
    trajectories_from_dict,
    trajectories_to_dict,
    write_observation_log,
)

EXIT_OK, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _config(args) -> ScenarioConfig:
    config = load_config(args.config) if getattr(args, "config", None) else ScenarioConfig()
    if getattr(args, "seed", None) is not None:
        config = config.replace(seed=args.seed)
    return config


def _run_options(args) -> RunOptions:
    return RunOptions(method=args.method, n_members=args.members, per_step=not args.final_only,
                      multistart=args.multistart, include_timings=args.timings)


def _write(text: str, path) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _step_rows(report: dict) -> list[dict]:
    rows = []
    for method, res in sorted(report["methods"].items()):
        steps = res.get("steps") or [1]
        counts = res.get("clusters_per_step") or [res.get("n_resolutions")]
        rmse = res.get("rmse_per_step") or []
        for k, h in enumerate(steps):
            rows.append({"method": method, "step": h, "clusters": counts[k] if k < len(counts) else None,
                         "rmse": rmse[h] if h < len(rmse) else res.get("constellation_rmse")})
    return rows


def cmd_simulate(args) -> int:
    config = _config(args)
    traj = generate_trajectories(config)
    write_observation_log(args.out, synthesize_observations(traj, config), config)
    if args.truth:
        with open(args.truth, "w") as fh:
            json.dump(trajectories_to_dict(traj), fh, sort_keys=True)
            fh.write("\n")
    if args.emit_plot_data:
        rows = [{"step": h, "robot": r, "x": p[0], "y": p[1], "z": p[2]}
                for h, poses in enumerate(traj.positions) for r, p in enumerate(poses)]
        write_csv(rows, ("step", "robot", "x", "y", "z"), args.emit_plot_data)
    return EXIT_OK


def cmd_solve(args) -> int:
    rounds, logged = read_observation_log(args.log)
    config = load_config(args.config) if args.config else (logged or ScenarioConfig())
    traj = None
    if args.truth:
        with open(args.truth) as fh:
            traj = trajectories_from_dict(json.load(fh))
    report = run_rounds(config, traj, rounds, _run_options(args))
    _write(report_json(report), args.out)
    if args.emit_plot_data:
        write_csv(_step_rows(report), ("method", "step", "clusters", "rmse"), args.emit_plot_data)
    return EXIT_SOLVER if outcome_failed(report) else EXIT_OK


def cmd_run(args) -> int:
    report = run_scenario(_config(args), _run_options(args))
    _write(report_json(report), args.out)
    if args.emit_plot_data:
        write_csv(_step_rows(report), ("method", "step", "clusters", "rmse"), args.emit_plot_data)
    return EXIT_SOLVER if outcome_failed(report) else EXIT_OK


def _axis_value(axis: str, text: str):
    return int(text) if axis in ("n_steps", "n_robots") else float(text)


def cmd_sweep(args) -> int:
    base = _config(args)
    values = [_axis_value(args.axis, v) for v in args.values.split(",") if v.strip()]
    spec = SweepSpec(args.axis, tuple(values), args.reps, base, args.seed or 0, _run_options(args))
    result = run_sweep(spec, args.workers)
    doc = {"axis": spec.axis, "values": list(spec.values), "repetitions": spec.repetitions,
           "base_seed": spec.base_seed, "aggregate": result.aggregate, "reports": result.reports}
    _write(json.dumps(doc, indent=2, sort_keys=True) + "\n", args.out)
    if args.emit_plot_data:
        write_csv(result.table, TABLE_FIELDS, args.emit_plot_data)
    if args.aggregate:
        write_csv(result.aggregate, AGGREGATE_FIELDS, args.aggregate)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="swarmloc", description="Swarm localisation from ranges, headings and depths.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, method=True):
        p.add_argument("--config", help="scenario configuration JSON")
        p.add_argument("--seed", type=int, help="override the configuration seed")
        p.add_argument("--out", help="output path (stdout when omitted)")
        p.add_argument("--emit-plot-data", help="write a CSV table for plotting")
        if method:
            p.add_argument("--method", choices=METHODS, default="both")
            p.add_argument("--members", type=int, default=4, help="constellation size for the constraint solver")
            p.add_argument("--multistart", type=int, default=16)
            p.add_argument("--final-only", action="store_true",
                           help="solve only the full step count (no steps-to-uniqueness)")
            p.add_argument("--timings", action="store_true", help="include wall times (breaks byte-identity)")

    p = sub.add_parser("simulate", help="write an observation log")
    common(p, method=False)
    p.add_argument("--truth", help="also write the ground-truth trajectories JSON")
    p.set_defaults(func=cmd_simulate, need_out=True)

    p = sub.add_parser("solve", help="solve a saved observation log")
    common(p)
    p.add_argument("--log", required=True)
    p.add_argument("--truth", help="ground-truth trajectories JSON for scoring")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("run", help="simulate and solve end to end")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="ensemble study over one scenario parameter")
    common(p)
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--workers", type=int, help="parallel workers (default from SWARMLOC_WORKERS or 1)")
    p.add_argument("--aggregate", help="write the per-value aggregate CSV")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "need_out", False) and not args.out:
            raise UsageError("simulate: --out is required")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"swarmloc: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
