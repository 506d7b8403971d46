"""End-to-end scenario runs, error metrics, sweeps and report documents."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import MismatchedRobots, SwarmLocError
from .extend import extend_swarm
from .geometry import Configuration
from .optim import SolveOptions, recover_tracks_and_speeds, solve
from .sim import (
    FORMAT_VERSION,
    ScenarioConfig,
    generate_trajectories,
    synthesize_observations,
)
from .trilat import ResolvedConstellation, select_members, solve_constellation

METHODS = ("trilateration", "constraints", "both")
SWEEP_AXES = ("sigma_distance", "sigma_heading", "n_steps", "n_robots")
WORKERS_ENV = "SWARMLOC_WORKERS"


@dataclass(frozen=True)
class Alignment:
    rmse: float
    reflection_detected: bool
    errors: dict  # robot -> position error, m


def align_and_rmse(estimate: Configuration, truth: Configuration) -> Alignment:
    """RMSE of ``estimate`` against ``truth`` translated onto the estimate's origin robot.

    No rotation is fitted since both frames share the compass orientation.
    The estimate mirrored across the x and y axes through its origin robot is
    scored too; a mirror scoring more than twice better flags a reflection.
    Only the common leading coordinates are compared (planar against 3D).
    """
    if set(estimate.ids) != set(truth.ids):
        raise MismatchedRobots(f"estimate has {sorted(estimate.ids)}, truth has {sorted(truth.ids)}")
    dim = min(estimate.dim, truth.dim)
    o = estimate.origin
    est = np.array([estimate.pos(r)[:dim] for r in estimate.ids])
    tru = np.array([truth.pos(r)[:dim] for r in estimate.ids])
    tru = tru - truth.pos(o)[:dim] + estimate.pos(o)[:dim]
    err = np.linalg.norm(est - tru, axis=1)
    rmse = float(np.sqrt(np.mean(err**2)))
    centre = estimate.pos(o)[:dim]
    mirrored = []
    for axis in (1, 0):  # across the x axis flips y, across the y axis flips x
        flip = np.ones(dim)
        flip[axis] = -1.0
        m = (est - centre) * flip + centre
        mirrored.append(float(np.sqrt(np.mean(((m - tru) ** 2).sum(1)))))
    reflected = min(mirrored) * 2.0 < rmse
    return Alignment(rmse, bool(reflected), {int(r): float(e) for r, e in zip(estimate.ids, err)})


@dataclass(frozen=True)
class RunOptions:
    method: str = "both"
    n_members: int = 4  # constellation size, origin included
    origin: int = 0
    per_step: bool = True  # solve every prefix of steps to find steps-to-uniqueness
    multistart: int = 16
    extend: bool = True
    include_timings: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.n_members < 3:
            raise ValueError("n_members must be at least 3")


def _error_entry(exc: Exception) -> dict:
    return {"solved": False, "outcome": type(exc).__name__, "message": str(exc)}


def _truth_configuration(traj, members: Sequence[int], origin: int, step: int, dim: int) -> Configuration:
    rel = traj.relative_to(origin)[step]
    return Configuration(tuple(members), rel[list(members), :dim], origin, float(traj.times[step]))


def _trilateration(config: ScenarioConfig, traj, rounds, opts: RunOptions, timings: dict) -> dict:
    if len(rounds) < 2:
        return {"solved": False, "outcome": "NotEnoughSteps", "message": "needs two rounds"}
    tol = max(1e-6, 3.0 * config.sigma_distance * math.sqrt(2.0))
    depth_tol = tol + 3.0 * config.sigma_depth
    t0 = time.perf_counter()
    try:
        members = select_members(rounds[0], opts.origin, 3)
        result = solve_constellation(rounds[0], rounds[1], members, tol=tol, depth_tol=depth_tol)
    except SwarmLocError as exc:
        timings["trilateration"] = time.perf_counter() - t0
        return _error_entry(exc)
    timings["trilateration"] = time.perf_counter() - t0
    out = {"members": [int(m) for m in members], "n_pairs": len(result.pairs), "tol": tol}
    if not isinstance(result, ResolvedConstellation):
        out.update(solved=False, outcome="ambiguous", n_resolutions=result.n_distinct,
                   underdetermined=bool(result.underdetermined))
        return out
    conf = result.config0
    out.update(solved=True, outcome="resolved", n_resolutions=1, constellation=_config_doc(conf))
    if traj is not None:
        al = align_and_rmse(conf, _truth_configuration(traj, conf.ids, opts.origin, 0, 3))
        out.update(constellation_rmse=al.rmse, reflection_detected=al.reflection_detected)
    if opts.extend:
        out["swarm"] = _extension_doc(conf, rounds[0], traj, opts, timings, "trilateration_extend")
    return out


def _constraints(config: ScenarioConfig, traj, rounds, opts: RunOptions, timings: dict) -> dict:
    sig = config.sigma_distance
    sopts = SolveOptions(
        multistart=opts.multistart, sigma_distance=sig, sigma_heading=config.sigma_heading,
        tau=max(1e-6, 3.0 * sig), seed=config.seed,
    )
    H = len(rounds) - 1
    if H < 1:
        return {"solved": False, "outcome": "NotEnoughSteps", "message": "needs two rounds"}
    try:
        members = select_members(rounds[0], opts.origin, opts.n_members - 1)
    except SwarmLocError as exc:
        return _error_entry(exc)
    counts: list[int | None] = []
    steps = range(1, H + 1) if opts.per_step else [H]
    sset = None
    t0 = time.perf_counter()
    failure = None
    for h in steps:
        try:
            sset = solve(rounds[: h + 1], members, sopts)
            counts.append(sset.n_clusters)
        except SwarmLocError as exc:
            counts.append(None)
            failure = exc
            sset = None
    timings["constraints"] = time.perf_counter() - t0
    out: dict = {"members": [int(m) for m in members], "steps": list(steps), "clusters_per_step": counts}
    if opts.per_step:
        out["steps_to_uniqueness"] = _steps_to_uniqueness(counts)
    if sset is None:
        out.update(_error_entry(failure))
        return out
    best = sset.best
    layout = sset.layout
    out.update(solved=True, outcome="unique" if sset.unique else "ambiguous", n_clusters=sset.n_clusters,
               objective=best.objective, violation=best.violation, threshold=sset.stats.get("threshold"))
    times = [r.timestamp for r in rounds]
    confs = [Configuration(layout.members, best.positions[h], layout.origin, times[h]) for h in range(H + 1)]
    out["spread"] = sset.spread()
    out["solution"] = [_config_doc(c) for c in confs]
    tracks = recover_tracks_and_speeds(best.positions, times)
    out["recovered_speeds"] = tracks.speeds.tolist()
    if traj is not None:
        per_step = [
            align_and_rmse(c, _truth_configuration(traj, layout.members, layout.origin, h, 2)).rmse
            for h, c in enumerate(confs)
        ]
        out["rmse_per_step"] = per_step
        out["rmse"] = float(np.sqrt(np.mean(np.square(per_step))))
        true_speeds = traj.speeds()[:H][:, list(layout.members)]
        out["speed_errors"] = np.abs(tracks.speeds - true_speeds).tolist()
        out["max_speed_error"] = float(np.abs(tracks.speeds - true_speeds).max())
    if opts.extend:
        conf0 = confs[0]
        out["swarm"] = _extension_doc(conf0, rounds[0], traj, opts, timings, "constraints_extend")
    return out


def _steps_to_uniqueness(counts: Sequence[int | None]) -> int | None:
    """First step from which every later solve has a single cluster; None if never."""
    first = None
    for h, c in enumerate(counts, start=1):
        if c == 1:
            first = h if first is None else first
        else:
            first = None
    return first


def _extension_doc(conf: Configuration, round0, traj, opts: RunOptions, timings: dict, key: str) -> dict:
    t0 = time.perf_counter()
    ext = extend_swarm(conf, round0)
    timings[key] = time.perf_counter() - t0
    full = ext.configuration
    out = {"positioned": len(full.ids), "unresolved": [int(r) for r in ext.unresolved],
           "configuration": _config_doc(full)}
    if traj is not None:
        al = align_and_rmse(full, _truth_configuration(traj, full.ids, opts.origin, 0, full.dim))
        out.update(rmse=al.rmse, max_error=max(al.errors.values()),
                   errors={str(k): v for k, v in sorted(al.errors.items())})
    return out


def _config_doc(conf: Configuration) -> dict:
    return {"origin": int(conf.origin), "timestamp": float(conf.timestamp),
            "positions": {str(r): [float(c) for c in conf.pos(r)] for r in conf.ids}}


def run_scenario(config: ScenarioConfig, opts: RunOptions | None = None) -> dict:
    """Simulate, run the selected methods on one shared observation log, and score them.

    Solver failures are recorded in the report rather than raised. The report
    is deterministic for a given configuration; wall times are only included
    with ``opts.include_timings``.
    """
    opts = opts or RunOptions()
    traj = generate_trajectories(config)
    rounds = synthesize_observations(traj, config)
    return run_rounds(config, traj, rounds, opts)


def run_rounds(config: ScenarioConfig, traj, rounds, opts: RunOptions) -> dict:
    """Run the selected methods on given rounds; score against ``traj`` unless it is None."""
    timings: dict = {}
    results = {}
    if opts.method in ("trilateration", "both"):
        results["trilateration"] = _trilateration(config, traj, rounds, opts, timings)
    if opts.method in ("constraints", "both"):
        results["constraints"] = _constraints(config, traj, rounds, opts, timings)
    report = {
        "format_version": FORMAT_VERSION,
        "seed": config.seed,
        "config": config.to_dict(),
        "options": dataclasses.asdict(opts),
        "trajectory_violation": None if traj is None else bool(traj.violation),
        "methods": results,
    }
    if opts.include_timings:
        report["timings"] = timings
    return _plain(report)


def _plain(obj):
    """Convert numpy scalars and non-finite floats for a strict JSON document."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    return obj


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def write_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        fh.write(report_json(report))


def outcome_failed(report: dict) -> bool:
    """True when any method in the report failed or stayed ambiguous."""
    for res in report["methods"].values():
        if not res.get("solved") or res.get("outcome") == "ambiguous":
            return True
    return False


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    repetitions: int = 1
    base: ScenarioConfig = field(default_factory=ScenarioConfig)
    base_seed: int = 0
    run: RunOptions = field(default_factory=RunOptions)

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ValueError(f"axis must be one of {SWEEP_AXES}")
        if not len(self.values):
            raise ValueError("values must not be empty")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        object.__setattr__(self, "values", tuple(self.values))

    def jobs(self) -> list[tuple[int, object, ScenarioConfig]]:
        """``(run index, axis value, config)``; seed is ``base_seed + run index``."""
        out = []
        k = 0
        for v in self.values:
            for _ in range(self.repetitions):
                out.append((k, v, self.base.replace(**{self.axis: v, "seed": self.base_seed + k})))
                k += 1
        return out


@dataclass(frozen=True)
class SweepResult:
    spec: SweepSpec
    reports: list  # one per run, ordered by run index
    table: list  # one flat row per (run, method)
    aggregate: list  # one row per (axis value, method)


TABLE_FIELDS = ("run", "value", "seed", "method", "solved", "outcome", "rmse", "n_clusters",
                "steps_to_uniqueness", "swarm_rmse")
AGGREGATE_FIELDS = ("value", "method", "runs", "success_rate", "ambiguous_rate", "median_rmse", "p90_rmse",
                    "steps_to_uniqueness")


def _run_job(job):
    k, value, config, opts = job
    report = run_scenario(config, opts)
    report["run_index"] = k
    report["axis_value"] = value
    return report


def _workers(workers: int | None) -> int:
    if workers is not None:
        return max(1, workers)
    env = os.environ.get(WORKERS_ENV)
    return max(1, int(env)) if env else 1


def run_sweep(spec: SweepSpec, workers: int | None = None) -> SweepResult:
    """Run every (value, repetition) of the sweep, in parallel when workers > 1.

    Reports come back sorted by run index, so the output does not depend on
    the worker count.
    """
    jobs = [(k, v, c, spec.run) for k, v, c in spec.jobs()]
    n = _workers(workers)
    if n == 1:
        reports = [_run_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            reports = list(pool.map(_run_job, jobs))
    reports.sort(key=lambda r: r["run_index"])
    table = [row for r in reports for row in _rows(r)]
    return SweepResult(spec, reports, table, _aggregate(table, spec.values))


def _rows(report: dict) -> list[dict]:
    rows = []
    for method, res in sorted(report["methods"].items()):
        swarm = res.get("swarm") or {}
        rows.append({
            "run": report["run_index"], "value": report["axis_value"], "seed": report["seed"], "method": method,
            "solved": bool(res.get("solved")), "outcome": res.get("outcome"),
            "rmse": res.get("rmse", res.get("constellation_rmse")),
            "n_clusters": res.get("n_clusters", res.get("n_resolutions")),
            "steps_to_uniqueness": res.get("steps_to_uniqueness"), "swarm_rmse": swarm.get("rmse"),
            "stepwise": "steps_to_uniqueness" in res,
        })
    return rows


def _aggregate(table: list[dict], values: Sequence) -> list[dict]:
    out = []
    methods = sorted({r["method"] for r in table})
    for v in values:
        for m in methods:
            rows = [r for r in table if r["value"] == v and r["method"] == m]
            if not rows:
                continue
            rmse = [r["rmse"] for r in rows if r["rmse"] is not None]
            stu = [r["steps_to_uniqueness"] for r in rows if r["stepwise"]]
            hist = {}
            for s in stu:
                key = "unresolved" if s is None else str(s)
                hist[key] = hist.get(key, 0) + 1
            out.append({
                "value": v, "method": m, "runs": len(rows),
                "success_rate": sum(r["solved"] for r in rows) / len(rows),
                "ambiguous_rate": sum(r["outcome"] == "ambiguous" for r in rows) / len(rows),
                "median_rmse": float(np.median(rmse)) if rmse else None,
                "p90_rmse": float(np.percentile(rmse, 90)) if rmse else None,
                "steps_to_uniqueness": json.dumps(hist, sort_keys=True) if stu else None,
            })
    return out


def write_csv(rows: list[dict], fields: Sequence[str], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in fields})
