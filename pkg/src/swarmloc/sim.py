"""Ground-truth swarm motion and heartbeat measurement synthesis.

The kinematic model is a per-robot correlated random walk: each step the
heading turns by a bounded uniform amount and the speed is redrawn in
``(0, v_max]``. Velocity is constant within a step, so positions between
steps are linear in time. Proposed steps that would break the arena or
inter-robot distance bounds are resampled.

Two random streams are derived from ``seed``: one for motion and one for
measurement noise, so changing a noise level never changes the trajectories.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import GenerationFailure, InsufficientBracketing
from .geometry import DistanceMatrix, kmh_to_ms, pairwise_distances, wrap_angle, wrap_angles

FORMAT_VERSION = 1
STATIONARY_THRESHOLD = 0.01  # m per step; below this a heading is not usable
MIN_MEASURED_DISTANCE = 1e-3

_SYNC = "synchronized"
_ASYNC = "asynchronous"


@dataclass(frozen=True)
class ScenarioConfig:
    n_robots: int = 20
    arena_radius: float = 50.0
    v_max: float = kmh_to_ms(4.0)
    d_min: float = 3.0
    d_max: float = 50.0
    n_steps: int = 7
    dt: float = 1.0
    heading_persistence: float = 0.9
    sigma_distance: float = 0.0
    sigma_heading: float = 0.0
    sigma_depth: float = 0.0
    emission_mode: str = _SYNC
    seed: int = 0
    # artifact-level extensions
    spawn_radius: float = 15.0
    depth_min: float = 5.0
    depth_max: float = 15.0
    depth_drift: float = 0.0
    sigma_velocity: float = 0.0
    speed_meter: bool = True
    jitter_max: float = 0.1
    uniform_translation: bool = False
    max_resample: int = 200

    def __post_init__(self):
        problems = []
        if self.n_robots < 3:
            problems.append("n_robots must be >= 3")
        if not 0 < self.d_min < self.d_max <= 2 * self.arena_radius:
            problems.append("need 0 < d_min < d_max <= 2 * arena_radius")
        if self.v_max <= 0 or self.dt <= 0:
            problems.append("v_max and dt must be positive")
        if self.n_steps < 0:
            problems.append("n_steps must be >= 0")
        if not 0.0 <= self.heading_persistence <= 1.0:
            problems.append("heading_persistence must be in [0, 1]")
        if min(self.sigma_distance, self.sigma_heading, self.sigma_depth, self.sigma_velocity) < 0:
            problems.append("noise sigmas must be >= 0")
        if self.emission_mode not in (_SYNC, _ASYNC):
            problems.append(f"emission_mode must be {_SYNC!r} or {_ASYNC!r}")
        if not 0 < self.spawn_radius <= self.arena_radius:
            problems.append("spawn_radius must be in (0, arena_radius]")
        if self.depth_min > self.depth_max:
            problems.append("depth_min must not exceed depth_max")
        if not 0 <= self.depth_drift < self.v_max:
            problems.append("depth_drift must be in [0, v_max)")
        if self.jitter_max < 0:
            problems.append("jitter_max must be >= 0")
        if problems:
            raise ValueError("; ".join(problems))

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown scenario keys: {', '.join(unknown)}")
        return cls(**data)


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        return ScenarioConfig.from_dict(json.load(fh))


def save_config(config: ScenarioConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass(frozen=True)
class TrajectorySet:
    """Ground truth: ``n_steps + 1`` poses per robot.

    ``velocities[h]`` is the constant velocity used between pose ``h`` and
    ``h + 1``; for the last pose it is the velocity of the next (unrecorded)
    step, so every pose has a defined heading.
    """

    times: np.ndarray  # (T,)
    positions: np.ndarray  # (T, N, 3)
    velocities: np.ndarray  # (T, N, 3)
    headings: np.ndarray  # (T, N)
    moving: np.ndarray  # (T, N) bool
    dt: float
    violation: bool = False

    @property
    def n_robots(self) -> int:
        return self.positions.shape[1]

    @property
    def n_steps(self) -> int:
        return self.positions.shape[0] - 1

    def position_at(self, t: float) -> np.ndarray:
        """Positions of all robots at time ``t`` (linear within a step, extrapolated outside)."""
        k = self.step_index(t)
        return self.positions[k] + self.velocities[k] * (t - self.times[k])

    def step_index(self, t: float) -> int:
        k = int(math.floor((t - self.times[0]) / self.dt + 1e-12))
        return min(max(k, 0), self.n_steps)

    def speeds(self) -> np.ndarray:
        """Horizontal speeds (T-1, N) between recorded poses."""
        disp = np.diff(self.positions[:, :, :2], axis=0)
        return np.linalg.norm(disp, axis=2) / self.dt

    def relative_to(self, origin: int) -> np.ndarray:
        return self.positions - self.positions[:, origin : origin + 1, :]


@dataclass(frozen=True)
class ObservationRound:
    """One heartbeat snapshot for all robots at ``timestamp``.

    ``velocities`` is present only in speed-meter mode. ``moving[i]`` is False
    when robot ``i`` was stationary over the following step, in which case its
    heading must not be used for constraints.
    """

    timestamp: float
    headings: np.ndarray
    depths: np.ndarray
    distances: DistanceMatrix
    velocities: np.ndarray | None = None
    moving: np.ndarray | None = None

    def __post_init__(self):
        n = self.distances.n
        h = np.array(self.headings, dtype=float)
        d = np.array(self.depths, dtype=float)
        if h.shape != (n,) or d.shape != (n,):
            raise ValueError("headings/depths must have one entry per robot")
        object.__setattr__(self, "headings", wrap_angles(h))
        object.__setattr__(self, "depths", d)
        if self.velocities is not None:
            v = np.array(self.velocities, dtype=float)
            if v.shape != (n, 3):
                raise ValueError("velocities must be (n, 3)")
            object.__setattr__(self, "velocities", v)
        mv = np.ones(n, dtype=bool) if self.moving is None else np.array(self.moving, dtype=bool)
        object.__setattr__(self, "moving", mv)

    @property
    def n_robots(self) -> int:
        return self.distances.n

    def with_distances(self, distances: DistanceMatrix) -> "ObservationRound":
        return dataclasses.replace(self, distances=distances)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ObservationRound):
            return NotImplemented
        same_v = (self.velocities is None and other.velocities is None) or (
            self.velocities is not None
            and other.velocities is not None
            and np.array_equal(self.velocities, other.velocities)
        )
        return (
            self.timestamp == other.timestamp
            and np.array_equal(self.headings, other.headings)
            and np.array_equal(self.depths, other.depths)
            and np.array_equal(self.moving, other.moving)
            and self.distances == other.distances
            and same_v
        )


@dataclass(frozen=True)
class Emission:
    """A single robot's asynchronous heartbeat."""

    robot: int
    time: float
    heading: float
    depth: float
    velocity: np.ndarray | None
    moving: bool
    distances: dict = field(default_factory=dict)  # neighbour id -> measured range


# ---------------------------------------------------------------------------
# trajectory generation
# ---------------------------------------------------------------------------


def _motion_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), 0]))


def _noise_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), 1]))


def _place_initial(config: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    n = config.n_robots
    for _restart in range(20):
        pts = np.zeros((0, 3))
        for _i in range(n):
            for _try in range(500):
                r = config.spawn_radius * math.sqrt(rng.random())
                a = rng.uniform(-math.pi, math.pi)
                z = rng.uniform(config.depth_min, config.depth_max)
                p = np.array([r * math.cos(a), r * math.sin(a), z])
                if len(pts):
                    d = np.linalg.norm(pts - p, axis=1)
                    if d.min() < config.d_min or d.max() > config.d_max:
                        continue
                pts = np.vstack([pts, p])
                break
            else:
                break
        if len(pts) == n:
            return pts
    raise GenerationFailure(
        f"could not place {n} robots with spacing in [{config.d_min}, {config.d_max}] "
        f"inside spawn radius {config.spawn_radius}"
    )


def _bad_robots(config: ScenarioConfig, pos: np.ndarray) -> np.ndarray:
    """Boolean mask of robots breaking an arena, depth or spacing bound."""
    bad = np.hypot(pos[:, 0], pos[:, 1]) > config.arena_radius
    bad |= (pos[:, 2] < config.depth_min - 1e-12) | (pos[:, 2] > config.depth_max + 1e-12)
    d = pairwise_distances(pos)
    np.fill_diagonal(d, config.d_min)
    viol = (d < config.d_min) | (d > config.d_max)
    bad |= viol.any(axis=1)
    return bad


def generate_trajectories(config: ScenarioConfig) -> TrajectorySet:
    """Deterministic ground-truth trajectories for ``config``."""
    rng = _motion_rng(config.seed)
    n, dt = config.n_robots, config.dt
    pos = _place_initial(config, rng)
    heading = rng.uniform(-math.pi, math.pi, n)
    max_turn = math.pi * (1.0 - config.heading_persistence)
    h_speed_cap = math.sqrt(config.v_max**2 - config.depth_drift**2)

    positions = [pos.copy()]
    velocities, headings = [], []
    violation = False

    def propose(idx: np.ndarray, attempt: int):
        k = len(idx)
        # widen the turn range while resampling so cornered robots can escape
        widen = min(1.0, attempt / max(1, config.max_resample // 4))
        limit = max_turn + widen * (math.pi - max_turn)
        turn = rng.uniform(-limit, limit, k)
        speed = h_speed_cap * (1.0 - rng.random(k))  # (0, cap]
        vz = rng.uniform(-config.depth_drift, config.depth_drift, k) if config.depth_drift > 0 else np.zeros(k)
        return turn, speed, vz

    for _step in range(config.n_steps + 1):
        new_heading = heading.copy()
        vel = np.zeros((n, 3))
        todo = np.arange(n)
        for attempt in range(config.max_resample + 1):
            if config.uniform_translation:
                turn, speed, vz = propose(np.arange(1), attempt)
                new_heading[:] = wrap_angle(heading[0] + turn[0])
                vel[:] = [speed[0] * math.cos(new_heading[0]), speed[0] * math.sin(new_heading[0]), vz[0]]
            else:
                turn, speed, vz = propose(todo, attempt)
                new_heading[todo] = wrap_angles(heading[todo] + turn)
                vel[todo, 0] = speed * np.cos(new_heading[todo])
                vel[todo, 1] = speed * np.sin(new_heading[todo])
                vel[todo, 2] = vz
            bad = _bad_robots(config, pos + vel * dt)
            if not bad.any():
                break
            if attempt == config.max_resample:
                violation = True
                break
            todo = np.flatnonzero(bad)
        heading = new_heading
        velocities.append(vel.copy())
        headings.append(heading.copy())
        if len(positions) <= config.n_steps:
            pos = pos + vel * dt
            positions.append(pos.copy())

    positions_a = np.array(positions)
    velocities_a = np.array(velocities)
    headings_a = np.array(headings)
    moving = np.linalg.norm(velocities_a[:, :, :2], axis=2) * dt >= STATIONARY_THRESHOLD
    times = np.arange(config.n_steps + 1) * dt
    for a in (positions_a, velocities_a, headings_a, moving, times):
        a.setflags(write=False)
    return TrajectorySet(times, positions_a, velocities_a, headings_a, moving, dt, violation)


# ---------------------------------------------------------------------------
# measurements
# ---------------------------------------------------------------------------


def _noisy_distances(true_d: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    n = true_d.shape[0]
    iu = np.triu_indices(n, 1)
    vals = true_d[iu]
    if sigma > 0:
        vals = np.maximum(vals + rng.normal(0.0, sigma, vals.shape), MIN_MEASURED_DISTANCE)
    out = np.zeros((n, n))
    out[iu] = vals
    out[(iu[1], iu[0])] = vals
    return out


def _round_from_truth(
    traj: TrajectorySet, h: int, config: ScenarioConfig, rng: np.random.Generator
) -> ObservationRound:
    pos = traj.positions[h]
    dist = _noisy_distances(pairwise_distances(pos), config.sigma_distance, rng)
    headings = traj.headings[h]
    if config.sigma_heading > 0:
        headings = headings + rng.normal(0.0, config.sigma_heading, headings.shape)
    depths = pos[:, 2]
    if config.sigma_depth > 0:
        depths = depths + rng.normal(0.0, config.sigma_depth, depths.shape)
    vel = None
    if config.speed_meter:
        vel = traj.velocities[h]
        if config.sigma_velocity > 0:
            vel = vel + rng.normal(0.0, config.sigma_velocity, vel.shape)
    return ObservationRound(
        float(traj.times[h]), headings, depths, DistanceMatrix(dist), vel, traj.moving[h]
    )


def synthesize_observations(traj: TrajectorySet, config: ScenarioConfig) -> list[ObservationRound]:
    """Noisy heartbeat rounds, one per recorded pose.

    In asynchronous mode the rounds are interpolated from jittered per-robot
    emissions (see :func:`synthesize_emissions`).
    """
    if config.emission_mode == _ASYNC:
        emissions = synthesize_emissions(traj, config)
        return [interpolate_to_round(emissions, float(t), traj.n_robots) for t in traj.times]
    rng = _noise_rng(config.seed)
    return [_round_from_truth(traj, h, config, rng) for h in range(traj.n_steps + 1)]


def synthesize_emissions(traj: TrajectorySet, config: ScenarioConfig) -> list[Emission]:
    """Per-robot heartbeats emitted at round time plus uniform jitter.

    One extra emission round precedes ``t = 0`` (the robots were already moving
    with their initial velocity) so that every recorded pose is bracketed.
    """
    rng = _noise_rng(config.seed)
    n = traj.n_robots
    out = []
    for k in range(-1, traj.n_steps + 1):
        base = traj.times[0] + k * traj.dt
        jitter = rng.uniform(0.0, config.jitter_max, n) if config.jitter_max > 0 else np.zeros(n)
        for i in range(n):
            t = float(base + jitter[i])
            step = traj.step_index(t)
            pos = traj.position_at(t)
            d = np.linalg.norm(pos - pos[i], axis=1)
            if config.sigma_distance > 0:
                d = np.maximum(d + rng.normal(0.0, config.sigma_distance, n), MIN_MEASURED_DISTANCE)
            heading = traj.headings[step, i]
            if config.sigma_heading > 0:
                heading = heading + rng.normal(0.0, config.sigma_heading)
            depth = pos[i, 2] + (rng.normal(0.0, config.sigma_depth) if config.sigma_depth > 0 else 0.0)
            vel = None
            if config.speed_meter:
                vel = traj.velocities[step, i].copy()
                if config.sigma_velocity > 0:
                    vel = vel + rng.normal(0.0, config.sigma_velocity, 3)
            out.append(
                Emission(
                    i, t, wrap_angle(float(heading)), float(depth), vel, bool(traj.moving[step, i]),
                    {j: float(d[j]) for j in range(n) if j != i},
                )
            )
    return out


def _bracket(samples: list[tuple[float, object]], t: float):
    before = [s for s in samples if s[0] <= t]
    after = [s for s in samples if s[0] >= t]
    if not before or not after:
        return None
    return max(before, key=lambda s: s[0]), min(after, key=lambda s: s[0])


def _lerp(a: float, b: float, ta: float, tb: float, t: float) -> float:
    if tb == ta:
        return a
    w = (t - ta) / (tb - ta)
    return a + w * (b - a)


def interpolate_to_round(
    emissions: Sequence[Emission] | ObservationRound, target: float, n_robots: int | None = None
) -> ObservationRound:
    """Linearly interpolate asynchronous emissions to one synchronized round.

    Per-robot quantities are interpolated between that robot's bracketing
    emissions (headings along the shorter arc). A pair's range is interpolated
    between the two samples of that pair, from either endpoint, that bracket
    ``target``; pairs without such samples are left missing. A synchronized
    round at ``target`` is returned unchanged.
    """
    if isinstance(emissions, ObservationRound):
        if emissions.timestamp != target:
            raise InsufficientBracketing("a synchronized round only brackets its own timestamp")
        return emissions
    if n_robots is None:
        n_robots = 1 + max(e.robot for e in emissions)
    by_robot: dict[int, list[tuple[float, Emission]]] = {i: [] for i in range(n_robots)}
    pair_samples: dict[tuple[int, int], list[tuple[float, float]]] = {}
    for e in emissions:
        by_robot[e.robot].append((e.time, e))
        for j, d in e.distances.items():
            key = (min(e.robot, j), max(e.robot, j))
            pair_samples.setdefault(key, []).append((e.time, d))

    headings = np.zeros(n_robots)
    depths = np.zeros(n_robots)
    moving = np.zeros(n_robots, dtype=bool)
    velocities = np.zeros((n_robots, 3))
    have_vel = True
    for i in range(n_robots):
        br = _bracket(by_robot[i], target)
        if br is None:
            raise InsufficientBracketing(f"robot {i} has no emissions on both sides of t={target}")
        (ta, ea), (tb, eb) = br
        w = 0.0 if tb == ta else (target - ta) / (tb - ta)
        headings[i] = wrap_angle(ea.heading + w * wrap_angle(eb.heading - ea.heading))
        depths[i] = _lerp(ea.depth, eb.depth, ta, tb, target)
        moving[i] = ea.moving if w < 0.5 else eb.moving
        if ea.velocity is None or eb.velocity is None:
            have_vel = False
        else:
            velocities[i] = ea.velocity + w * (eb.velocity - ea.velocity)

    dist = np.full((n_robots, n_robots), np.nan)
    np.fill_diagonal(dist, 0.0)
    for (i, j), samples in sorted(pair_samples.items()):
        br = _bracket(samples, target)
        if br is None:
            continue
        (ta, da), (tb, db) = br
        dist[i, j] = dist[j, i] = max(_lerp(da, db, ta, tb, target), MIN_MEASURED_DISTANCE)
    return ObservationRound(
        float(target), headings, depths, DistanceMatrix(dist), velocities if have_vel else None, moving
    )


# ---------------------------------------------------------------------------
# observation log / truth files
# ---------------------------------------------------------------------------


def _num(x: float) -> float | None:
    return None if math.isnan(x) else float(x)


def round_to_record(r: ObservationRound) -> dict:
    return {
        "type": "round",
        "t": float(r.timestamp),
        "headings": [float(a) for a in r.headings],
        "depths": [float(z) for z in r.depths],
        "moving": [bool(m) for m in r.moving],
        "velocities": None if r.velocities is None else [[float(c) for c in v] for v in r.velocities],
        "distances": [[_num(d) for d in row] for row in r.distances.values],
    }


def round_from_record(rec: dict) -> ObservationRound:
    dist = np.array([[np.nan if d is None else d for d in row] for row in rec["distances"]], dtype=float)
    vel = rec.get("velocities")
    return ObservationRound(
        float(rec["t"]),
        np.array(rec["headings"], dtype=float),
        np.array(rec["depths"], dtype=float),
        DistanceMatrix(dist),
        None if vel is None else np.array(vel, dtype=float),
        np.array(rec["moving"], dtype=bool),
    )


def write_observation_log(path, rounds: Iterable[ObservationRound], config: ScenarioConfig | None = None) -> None:
    """Line-delimited JSON: a header line, then one round per line."""
    with open(path, "w") as fh:
        header = {"type": "header", "format_version": FORMAT_VERSION}
        if config is not None:
            header["config"] = config.to_dict()
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for r in rounds:
            fh.write(json.dumps(round_to_record(r), sort_keys=True) + "\n")


def read_observation_log(path) -> tuple[list[ObservationRound], ScenarioConfig | None]:
    rounds, config = [], None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.get("type")
            if kind == "header":
                if rec.get("format_version") != FORMAT_VERSION:
                    raise ValueError(f"{path}:{lineno}: unsupported format_version {rec.get('format_version')}")
                if rec.get("config") is not None:
                    config = ScenarioConfig.from_dict(rec["config"])
            elif kind == "round":
                rounds.append(round_from_record(rec))
            else:
                raise ValueError(f"{path}:{lineno}: unknown record type {kind!r}")
    return rounds, config


def trajectories_to_dict(traj: TrajectorySet) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "dt": traj.dt,
        "violation": bool(traj.violation),
        "times": traj.times.tolist(),
        "positions": traj.positions.tolist(),
        "velocities": traj.velocities.tolist(),
        "headings": traj.headings.tolist(),
        "moving": traj.moving.tolist(),
    }


def trajectories_from_dict(data: dict) -> TrajectorySet:
    return TrajectorySet(
        np.array(data["times"], dtype=float),
        np.array(data["positions"], dtype=float),
        np.array(data["velocities"], dtype=float),
        np.array(data["headings"], dtype=float),
        np.array(data["moving"], dtype=bool),
        float(data["dt"]),
        bool(data["violation"]),
    )
