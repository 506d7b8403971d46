"""Four-robot constellation from ranges plus one known movement.

Ranges among four robots fix their shape only up to rigid motion and
mirroring. Pinning a gauge (origin robot at zero, axis robot on the x-axis,
plane robot in the xy-plane) leaves the eight sign choices enumerated by
:func:`enumerate_candidates`. A second round after a known, non-uniform
movement selects the candidate whose shape moves into the new ranges.

The gauge frame is not the compass frame, so when the movement is given in
world coordinates (velocities from the heartbeat) each candidate is rotated
into the world frame by fitting the rotation that makes the moved shape
reproduce the second round's ranges. With ``frame="gauge"`` the movement is
taken to be expressed in the first round's gauge frame and no rotation is
fitted.
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import MissingDistance, NoConsistentPair, NotRealizable
from .geometry import Configuration, DistanceMatrix
from .sim import ObservationRound

DUPLICATE_TOL = 1e-7
CONTINUUM_PROBE = 0.05  # rad
SIGNS = tuple(itertools.product((1, -1), repeat=3))


@dataclass(frozen=True)
class GaugeConvention:
    origin: int
    axis: int
    plane: int
    free: int

    def __post_init__(self):
        if len({self.origin, self.axis, self.plane, self.free}) != 4:
            raise ValueError("gauge robots must be distinct")

    @property
    def ids(self) -> tuple[int, int, int, int]:
        return (self.origin, self.axis, self.plane, self.free)


@dataclass(frozen=True)
class Candidate:
    config: Configuration
    signs: tuple[int, int, int]


@dataclass(frozen=True)
class CandidateSet:
    candidates: tuple[Candidate, ...]
    gauge: GaugeConvention
    distances: np.ndarray  # (4, 4) ranges among gauge.ids, in gauge order
    timestamp: float = 0.0

    def __len__(self) -> int:
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def coords(self) -> np.ndarray:
        """(K, 4, 3) candidate coordinates in gauge order."""
        return np.array([c.config.coords for c in self.candidates])


@dataclass(frozen=True)
class MotionHypothesis:
    """Per-robot displacement over ``dt``, relative to the origin robot."""

    displacements: dict
    dt: float
    frame: str = "world"

    def __post_init__(self):
        if self.frame not in ("world", "gauge"):
            raise ValueError("frame must be 'world' or 'gauge'")
        for r, d in self.displacements.items():
            if not np.all(np.isfinite(d)):
                raise ValueError(f"non-finite displacement for robot {r}")

    @classmethod
    def from_velocities(
        cls, velocities: dict, origin: int, dt: float, frame: str = "world"
    ) -> "MotionHypothesis":
        v0 = np.asarray(velocities[origin], dtype=float)
        disp = {r: (np.asarray(v, dtype=float) - v0) * dt for r, v in velocities.items()}
        return cls(disp, dt, frame)


@dataclass(frozen=True)
class ConsistentPair:
    signs0: tuple[int, int, int]
    signs1: tuple[int, int, int]
    config0: Configuration
    config1: Configuration
    residual: float


@dataclass(frozen=True)
class ResolvedConstellation:
    config0: Configuration
    config1: Configuration
    pairs: tuple[ConsistentPair, ...]

    unique = True


@dataclass(frozen=True)
class AmbiguityReport:
    """More than one distinct resolution survived the motion check."""

    pairs: tuple[ConsistentPair, ...]
    resolutions: tuple[tuple[Configuration, Configuration], ...] = field(default=())
    # the movement leaves the world orientation free (e.g. uniform translation),
    # so the listed resolutions are samples of a continuum
    underdetermined: bool = False

    unique = False

    @property
    def n_distinct(self) -> int:
        return len(self.resolutions)


# ---------------------------------------------------------------------------
# candidate enumeration
# ---------------------------------------------------------------------------


def _gauge_distances(distances: DistanceMatrix, gauge: GaugeConvention) -> np.ndarray:
    ids = gauge.ids
    out = np.zeros((4, 4))
    for a, b in itertools.combinations(range(4), 2):
        d = distances.get(ids[a], ids[b])
        if d is None:
            raise MissingDistance(f"no range between robots {ids[a]} and {ids[b]}")
        out[a, b] = out[b, a] = d
    return out


def _sqrt_checked(value: float, tol: float, degenerate_sq: float, what: str) -> float:
    if value < -(tol * tol):
        raise NotRealizable(f"{what} squared is {value:.3g} (< -tol^2); ranges not embeddable in 3D")
    if value <= degenerate_sq:
        return 0.0
    return math.sqrt(value)


def enumerate_candidates(
    distances: DistanceMatrix, gauge: GaugeConvention, tol: float = 1e-6, timestamp: float = 0.0
) -> CandidateSet:
    """All gauge-fixed placements of the four gauge robots matching the ranges.

    Degenerate placements (plane robot on the axis, or free robot in the
    plane) make sign choices coincide; duplicates are merged, so fewer than
    eight candidates come back.
    """
    D = _gauge_distances(distances, gauge)
    d12, d13, d14 = D[0, 1], D[0, 2], D[0, 3]
    d23, d24, d34 = D[1, 2], D[1, 3], D[2, 3]
    scale = D.max()
    degenerate_sq = max(tol * tol, (1e-6 * scale) ** 2)

    x3 = (d12 * d12 + d13 * d13 - d23 * d23) / (2.0 * d12)
    y3 = _sqrt_checked(d13 * d13 - x3 * x3, tol, degenerate_sq, "plane-robot offset")
    x4 = (d12 * d12 + d14 * d14 - d24 * d24) / (2.0 * d12)

    raw = []
    for s2, s3, s4 in SIGNS:
        if y3 > 0.0:
            y4 = (d13 * d13 - 2.0 * x4 * x3 + d14 * d14 - d34 * d34) / (2.0 * s3 * y3)
            z4 = _sqrt_checked(d14 * d14 - x4 * x4 - y4 * y4, tol, degenerate_sq, "free-robot height")
            p4 = (s2 * x4, y4, s4 * z4)
        else:
            # plane robot collinear with the axis: the free robot fixes the plane instead
            y4 = _sqrt_checked(d14 * d14 - x4 * x4, tol, degenerate_sq, "free-robot offset")
            p4 = (s2 * x4, s3 * y4, 0.0)
        coords = np.array([(0.0, 0.0, 0.0), (s2 * d12, 0.0, 0.0), (s2 * x3, s3 * y3, 0.0), p4])
        raw.append(((s2, s3, s4), coords))

    kept: list[tuple[tuple[int, int, int], np.ndarray]] = []
    for signs, coords in raw:
        if any(np.max(np.abs(coords - c)) <= DUPLICATE_TOL for _, c in kept):
            continue
        kept.append((signs, coords))

    for signs, coords in kept:
        err = np.abs(_pair_distances(coords) - D).max()
        if err > tol:
            raise NotRealizable(f"candidate {signs} misses the ranges by {err:.3g} m (> tol)")

    cands = tuple(
        Candidate(Configuration(gauge.ids, coords, gauge.origin, timestamp), signs) for signs, coords in kept
    )
    return CandidateSet(cands, gauge, D, timestamp)


def _pair_distances(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff * diff).sum(-1))


# ---------------------------------------------------------------------------
# rotation fitting
# ---------------------------------------------------------------------------

_PAIRS = tuple(itertools.combinations(range(4), 2))


def _rodrigues(w: np.ndarray) -> np.ndarray:
    """Batched rotation matrices from rotation vectors (S, 3)."""
    return Rotation.from_rotvec(w).as_matrix()


def _kabsch(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Proper rotation R minimising sum ||R src_i - dst_i||^2 (no translation)."""
    h = src.T @ dst
    u, _s, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    return vt.T @ np.diag([1.0, 1.0, d]) @ u.T


@functools.lru_cache(maxsize=None)
def _start_rotations(n_random: int = 8, seed: int = 0) -> np.ndarray:
    group = Rotation.create_group("O").as_matrix()
    rnd = Rotation.random(n_random, random_state=seed).as_matrix()
    out = np.concatenate([group, rnd])
    out.setflags(write=False)
    return out


def fit_world_rotations(
    shapes0: np.ndarray, moves: np.ndarray, d1: np.ndarray, tol: float, iters: int = 80
) -> tuple[list[list[np.ndarray]], bool]:
    """Rotations R with ``R @ shape + moves`` reproducing the ranges ``d1``.

    ``shapes0`` is (K, 4, 3), one candidate per row block, with the origin
    robot first; ``moves`` is (4, 3) with zero motion for the origin. Residuals
    are range errors linearised around the target range, so they are in
    meters. Returns, per candidate, the distinct local solutions whose largest
    residual is within ``tol``, and whether any of them leaves a rotation
    direction unconstrained.
    """
    shapes0 = np.asarray(shapes0, dtype=float)
    K = len(shapes0)
    ia, ib = np.array(_PAIRS).T
    ci = shapes0[:, ia] - shapes0[:, ib]  # (K, 6, 3)
    mi = moves[ia] - moves[ib]  # (6, 3)
    dk = d1[ia, ib]
    base = (ci * ci).sum(-1) + (mi * mi).sum(-1) - dk * dk  # (K, 6)

    starts = _start_rotations()
    S = len(starts)
    R = np.tile(starts, (K, 1, 1))  # (K*S, 3, 3), candidate-major
    ci_s = np.repeat(ci, S, axis=0)
    base_s = np.repeat(base, S, axis=0)
    lam = np.full(len(R), 1e-3)

    def resid(R):
        q = np.einsum("sab,skb->ska", R, ci_s)
        r = (base_s + 2.0 * np.einsum("ka,ska->sk", mi, q)) / (2.0 * dk)
        return r, q

    r, q = resid(R)
    cost = (r * r).sum(1)
    for it in range(iters):
        J = np.cross(q, mi[None, :, :]) / dk[None, :, None]  # (KS, 6, 3)
        JtJ = np.einsum("ska,skb->sab", J, J)
        g = np.einsum("ska,sk->sa", J, r)
        step = -np.linalg.solve(JtJ + lam[:, None, None] * np.eye(3), g[..., None])[..., 0]
        R_new = _rodrigues(step) @ R
        r_new, q_new = resid(R_new)
        cost_new = (r_new * r_new).sum(1)
        better = cost_new < cost
        R = np.where(better[:, None, None], R_new, R)
        r = np.where(better[:, None], r_new, r)
        q = np.where(better[:, None, None], q_new, q)
        cost = np.where(better, cost_new, cost)
        lam = np.clip(np.where(better, lam * 0.3, lam * 10.0), 1e-12, 1e8)
        # stalled starts have a huge damping factor or a vanishing step
        if np.all((lam >= 1e8) | (np.abs(step).max(1) < 1e-12)):
            break

    worst = np.abs(r).max(1)
    # a continuum shows up as a finite turn along the weakest direction that
    # keeps the fit; isolated solutions can be rank deficient only to first order
    J = np.cross(q, mi[None, :, :]) / dk[None, :, None]
    weak_axis = np.linalg.svd(J)[2][:, -1, :]
    r_turn, _ = resid(_rodrigues(CONTINUUM_PROBE * weak_axis) @ R)
    free = bool(np.any((worst <= tol) & (np.abs(r_turn).max(1) <= tol)))
    out: list[list[np.ndarray]] = []
    for k in range(K):
        sols: list[np.ndarray] = []
        block = slice(k * S, (k + 1) * S)
        for s in np.argsort(cost[block], kind="stable") + k * S:
            if worst[s] > tol:
                continue
            if any(np.abs(R[s] - o).max() <= 1e-6 for o in sols):
                continue
            sols.append(R[s])
        out.append(sols)
    return out, free


def _fit_by_chirality(
    cands: CandidateSet, moves: np.ndarray, d1: np.ndarray, tol: float
) -> tuple[list[list[np.ndarray]], bool]:
    """Fit rotations once per handedness and map them onto the other candidates.

    A candidate with signs ``s`` equals the all-positive one times ``diag(s)``,
    so candidates differing by an even number of flips are proper rotations of
    each other and share their world placements.
    """
    signs = [np.array(c.signs, dtype=float) for c in cands]
    reps: list[int] = []
    owner: list[int] = []
    for k, s in enumerate(signs):
        for j in reps:
            if np.prod(s * signs[j]) > 0:
                owner.append(j)
                break
        else:
            reps.append(k)
            owner.append(k)
    coords = cands.coords()
    fits, free = fit_world_rotations(coords[reps], moves, d1, tol)
    rep_fits = dict(zip(reps, fits))
    mapped = [[R @ np.diag(signs[k] * signs[owner[k]]) for R in rep_fits[owner[k]]] for k in range(len(signs))]
    return mapped, free



# ---------------------------------------------------------------------------
# disambiguation
# ---------------------------------------------------------------------------


def disambiguate_by_motion(
    set_t0: CandidateSet,
    set_t1: CandidateSet,
    motion: MotionHypothesis,
    tol: float = 1e-6,
) -> ResolvedConstellation | AmbiguityReport:
    """Pair candidates across two rounds that agree with the known movement.

    A pair ``(c0, c1)`` is consistent when, after ``c0`` is placed in the
    motion's frame and moved, ``c1`` can be rotated onto it with every robot
    within ``tol``. Pairs reaching the same placement at the first round count
    as one resolution. Raises :class:`NoConsistentPair` when nothing survives.
    """
    if set_t0.gauge.ids != set_t1.gauge.ids:
        raise ValueError("candidate sets use different gauges")
    ids = set_t0.gauge.ids
    moves = np.array([np.asarray(motion.displacements[r], dtype=float) for r in ids])
    moves = moves - moves[0]
    origin = set_t0.gauge.origin
    t0, t1 = set_t0.timestamp, set_t1.timestamp

    pairs: list[ConsistentPair] = []
    resolutions: list[tuple[Configuration, Configuration]] = []
    c1_coords = set_t1.coords()
    c0_coords = set_t0.coords()
    if motion.frame == "gauge":
        fitted, free = [[np.eye(3)] for _ in c0_coords], False
    else:
        fitted, free = _fit_by_chirality(set_t0, moves, set_t1.distances, tol)
    for cand0, shape0, rotations in zip(set_t0, c0_coords, fitted):
        for R0 in rotations:
            p0 = shape0 @ R0.T
            p1 = p0 + moves
            for cand1, c1 in zip(set_t1, c1_coords):
                R1 = _kabsch(c1, p1)
                aligned = c1 @ R1.T
                res = float(np.linalg.norm(aligned - p1, axis=1).max())
                if res > tol:
                    continue
                conf0 = Configuration(ids, p0, origin, t0)
                conf1 = Configuration(ids, aligned, origin, t1)
                pairs.append(ConsistentPair(cand0.signs, cand1.signs, conf0, conf1, res))
                if not any(np.abs(p0 - r0.coords).max() <= max(tol, DUPLICATE_TOL) * 10 for r0, _ in resolutions):
                    resolutions.append((conf0, conf1))

    if not pairs:
        raise NoConsistentPair("no candidate pair agrees with the known movement within tol")
    if len(resolutions) == 1 and not free:
        return ResolvedConstellation(resolutions[0][0], resolutions[0][1], tuple(pairs))
    return AmbiguityReport(tuple(pairs), tuple(resolutions), free)


def select_members(round_: ObservationRound, origin: int, k: int = 3) -> list[int]:
    """The origin followed by its ``k`` nearest neighbours by measured range."""
    row = round_.distances.values[origin]
    others = [(row[j], j) for j in range(round_.n_robots) if j != origin and not math.isnan(row[j])]
    if len(others) < k:
        raise MissingDistance(f"robot {origin} has only {len(others)} measured neighbours")
    others.sort()
    return [origin] + [j for _, j in others[:k]]


def _filter_by_depth(
    result: ResolvedConstellation | AmbiguityReport, round0: ObservationRound, ids: Sequence[int], tol: float
) -> ResolvedConstellation | AmbiguityReport:
    rel = np.array([round0.depths[r] - round0.depths[ids[0]] for r in ids])

    def ok(conf: Configuration) -> bool:
        return float(np.abs(conf.coords[:, 2] - rel).max()) <= tol

    resolutions = [res for res in result.resolutions if ok(res[0])]
    pairs = tuple(p for p in result.pairs if ok(p.config0))
    if len(resolutions) == 1:
        return ResolvedConstellation(resolutions[0][0], resolutions[0][1], pairs)
    if not resolutions:
        raise NoConsistentPair("no motion-consistent resolution agrees with the measured depths")
    return AmbiguityReport(pairs, tuple(resolutions), result.underdetermined)


def solve_constellation(
    round0: ObservationRound,
    round1: ObservationRound,
    members: Sequence[int],
    gauge: GaugeConvention | None = None,
    tol: float = 1e-6,
    frame: str = "world",
    depth_tol: float | None = None,
) -> ResolvedConstellation | AmbiguityReport:
    """Enumerate both rounds, build the movement from velocities, disambiguate.

    When ``depth_tol`` is given, resolutions whose relative depths disagree
    with the depth meters by more than ``depth_tol`` are discarded; this
    removes the vertical mirror that purely horizontal motion cannot.
    """
    if round0.velocities is None:
        raise ValueError("constellation solving needs velocities (speed-meter mode)")
    members = list(members)
    if gauge is None:
        gauge = GaugeConvention(*members)
    dt = round1.timestamp - round0.timestamp
    set0 = enumerate_candidates(round0.distances, gauge, tol, round0.timestamp)
    set1 = enumerate_candidates(round1.distances, gauge, tol, round1.timestamp)
    motion = MotionHypothesis.from_velocities(
        {r: round0.velocities[r] for r in gauge.ids}, gauge.origin, dt, frame
    )
    result = disambiguate_by_motion(set0, set1, motion, tol)
    if depth_tol is not None and isinstance(result, AmbiguityReport) and not result.underdetermined:
        result = _filter_by_depth(result, round0, gauge.ids, depth_tol)
    return result
