"""Positioning the rest of the swarm from a solved constellation, and frame fusion."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial import ConvexHull, QhullError

from .errors import DegenerateAnchors, FrameMismatch, NotEnoughAnchors
from .geometry import Configuration
from .sim import ObservationRound

CONDITION_TOL = 1e-6  # normalised smallest singular value of the anchor spread


@dataclass(frozen=True)
class AnchorSet:
    """Known anchor positions (K, D) and their measured ranges to one target."""

    ids: tuple[int, ...]
    positions: np.ndarray
    distances: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        d = np.asarray(self.distances, dtype=float).ravel()
        if len(pos) != len(d) or len(self.ids) != len(d):
            raise ValueError("one position and one distance per anchor id")
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "distances", d)

    @classmethod
    def from_triples(cls, triples: Sequence[tuple[int, Sequence[float], float]]) -> "AnchorSet":
        ids, pos, d = zip(*triples) if triples else ((), np.zeros((0, 2)), ())
        return cls(tuple(ids), np.array(pos, dtype=float), np.array(d, dtype=float))

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class FixResult:
    position: np.ndarray
    residual: float  # m, norm of the range residuals
    condition: float  # normalised smallest singular value of the anchor spread


def anchor_condition(positions: np.ndarray) -> float:
    """Smallest singular value of the anchor offsets, scaled by the largest offset."""
    diff = positions[1:] - positions[0]
    scale = np.abs(diff).max() if diff.size else 0.0
    if scale == 0.0:
        return 0.0
    sv = np.linalg.svd(diff / scale, compute_uv=False)
    return float(sv[-1]) if len(sv) == positions.shape[1] else 0.0


def multilaterate(anchors: AnchorSet, planar: bool = True, tol: float = 1e-9) -> FixResult:
    """Least-squares position from ranges to known anchors.

    Planar fixes use the first two anchor coordinates and need three anchors
    not on a line; 3D fixes need four anchors not in a plane. The start is the
    linear solution of the differences of squared range equations, refined by
    Levenberg-Marquardt on the range residuals.
    """
    dim = 2 if planar else 3
    if len(anchors) < dim + 1:
        raise NotEnoughAnchors(f"{len(anchors)} anchors; a {dim}D fix needs at least {dim + 1}")
    if anchors.positions.shape[1] < dim:
        raise ValueError(f"anchor positions have fewer than {dim} coordinates")
    A = anchors.positions[:, :dim]
    d = anchors.distances
    cond = anchor_condition(A)
    if cond < CONDITION_TOL:
        raise DegenerateAnchors(
            f"anchors are {'collinear' if planar else 'coplanar'} (condition {cond:.2g}); the fix is ambiguous"
        )
    M = 2.0 * (A[1:] - A[0])
    rhs = (A[1:] ** 2).sum(1) - (A[0] ** 2).sum() - d[1:] ** 2 + d[0] ** 2
    p0 = np.linalg.lstsq(M, rhs, rcond=None)[0]

    def fun(p):
        return np.linalg.norm(A - p, axis=1) - d

    def jac(p):
        diff = p - A
        return diff / np.maximum(np.linalg.norm(diff, axis=1), 1e-12)[:, None]

    res = least_squares(fun, p0, jac=jac, method="lm", xtol=min(tol, 1e-12), ftol=1e-15, gtol=1e-15)
    p = res.x if np.linalg.norm(fun(res.x)) <= np.linalg.norm(fun(p0)) else p0
    return FixResult(p, float(np.linalg.norm(fun(p))), cond)


@dataclass(frozen=True)
class ExtendedSwarm:
    """Result of growing a constellation: positions, per-robot fixes and leftovers."""

    configuration: Configuration
    fixes: dict = field(default_factory=dict)  # robot -> FixResult, in fixing order
    unresolved: tuple[int, ...] = ()


def _spread(points: np.ndarray) -> float:
    """Area (planar) or volume of the anchors' convex hull; zero when flat."""
    try:
        return float(ConvexHull(points).volume)
    except (QhullError, ValueError):
        return 0.0


def extend_swarm(
    constellation: Configuration,
    round_: ObservationRound,
    use_depths: bool = True,
    robots: Sequence[int] | None = None,
) -> ExtendedSwarm:
    """Fix every other robot by multilateration from already known robots.

    Robots are fixed one at a time: the robot with most known ranging
    partners goes next, ties going to the larger anchor hull. Each fixed robot
    becomes an anchor for later ones. With ``use_depths`` the ranges are
    reduced to horizontal ranges by the depth meters and only the horizontal
    position is fixed; a 3D constellation (z being depth relative to the
    origin robot) then gets z from the target's depth meter. Without it a 3D
    constellation gets full 3D fixes and a planar one uses raw ranges. Robots
    that never gather enough non-degenerate anchors are returned as
    unresolved.
    """
    dim = constellation.dim
    planar = dim == 2 or use_depths
    need = 3 if planar else 4
    robots = range(round_.n_robots) if robots is None else robots
    known = {r: constellation.pos(r) for r in constellation.ids}
    pending = [r for r in robots if r not in known]
    depths = round_.depths
    z0 = depths[constellation.origin]
    fixes: dict[int, FixResult] = {}
    blocked: dict[int, int] = {}  # robot -> known count when its anchors were last degenerate

    def anchors_for(r):
        ids, pos, dist = [], [], []
        for k, p in known.items():
            dk = round_.distances.get(r, k)
            if dk is None:
                continue
            if use_depths:
                dz = depths[r] - depths[k]
                dk = float(np.sqrt(max(dk * dk - dz * dz, 0.0)))
            ids.append(k)
            pos.append(p[:2] if planar else p)
            dist.append(dk)
        return ids, pos, dist

    while pending:
        best = None
        for r in pending:
            if blocked.get(r) == len(known):
                continue
            ids, pos, dist = anchors_for(r)
            if len(ids) < need:
                continue
            key = (len(ids), _spread(np.array(pos)), -r)
            if best is None or key > best[0]:
                best = (key, r, ids, pos, dist)
        if best is None:
            break
        _, r, ids, pos, dist = best
        try:
            fix = multilaterate(AnchorSet(tuple(ids), np.array(pos), np.array(dist)), planar=planar)
        except DegenerateAnchors:
            blocked[r] = len(known)
            continue
        p = fix.position
        if dim == 3 and use_depths:
            p = np.append(p, depths[r] - z0)
        known[r] = p
        fixes[r] = fix
        pending.remove(r)

    ids = tuple(constellation.ids) + tuple(fixes)
    coords = np.array([known[r] for r in ids])
    conf = Configuration(ids, coords, constellation.origin, constellation.timestamp)
    return ExtendedSwarm(conf, fixes, tuple(sorted(pending)))


@dataclass(frozen=True)
class Fusion:
    configuration: Configuration
    translation: np.ndarray  # added to b's coordinates to express them in a's frame
    discrepancies: dict  # shared robot -> distance after translation, m
    reflection_checked: bool  # shared robots span the plane, so a mirrored branch would show

    @property
    def max_discrepancy(self) -> float:
        return max(self.discrepancies.values())


def fuse_constellations(
    a: Configuration, b: Configuration, shared: Sequence[int] | None = None, tol: float = 0.1
) -> Fusion:
    """Express ``b`` in ``a``'s frame by the mean translation over shared robots.

    Both frames share the compass orientation, so no rotation is estimated.
    Raises :class:`FrameMismatch` when a shared robot disagrees by more than
    ``tol`` after translation, as happens when one side holds a mirrored
    branch. With fewer than three non-collinear shared robots a mirror can
    pass unnoticed; ``reflection_checked`` reports this.
    """
    if a.dim != b.dim:
        raise ValueError("configurations differ in dimension")
    shared = [r for r in (shared if shared is not None else a.ids) if r in a and r in b]
    if not shared:
        raise ValueError("fusion needs at least one robot present in both configurations")
    pa = np.array([a.pos(r) for r in shared])
    pb = np.array([b.pos(r) for r in shared])
    t = (pa - pb).mean(0)
    gaps = np.linalg.norm(pb + t - pa, axis=1)
    disc = {r: float(g) for r, g in zip(shared, gaps)}
    if gaps.max() > tol:
        worst = shared[int(gaps.argmax())]
        raise FrameMismatch(
            f"robot {worst} disagrees by {gaps.max():.3g} m after translation (tol {tol}); "
            "one configuration is likely a mirrored branch"
        )
    extra = [r for r in b.ids if r not in a]
    ids = tuple(a.ids) + tuple(extra)
    coords = np.vstack([a.coords] + ([np.array([b.pos(r) for r in extra]) + t] if extra else []))
    checked = len(shared) >= 3 and anchor_condition(pa[:, :2]) >= CONDITION_TOL
    return Fusion(Configuration(ids, coords, a.origin, a.timestamp), t, disc, checked)
