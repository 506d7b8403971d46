"""Multi-start penalised least squares over the planar unknowns."""
from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares, minimize

from ..errors import BudgetExceeded, NoClosePair, NoSolutionFound
from ..sim import ObservationRound
from .constraints import ConstraintSet, build_constraints
from .layout import SolveOptions, VariableLayout
from .objective import ObjectiveSpec, build_objective, multi_objective, smooth_residuals
from .solution import Solution, SolutionSet, cluster, rms_distance

POLISH_LEVEL = 1.0  # starts ending below this plus twice the threshold get a constrained polish


def acceptance_threshold(spec: ObjectiveSpec, opts: SolveOptions) -> float:
    """Objective below which a converged start counts as a solution.

    For ``n`` squared Gaussian residuals of scale ``sigma`` the sum has mean
    ``n sigma^2`` and standard deviation ``sqrt(2 n) sigma^2``; the threshold
    is the mean plus three standard deviations for each term, plus a small
    absolute floor for the noiseless case.
    """
    if opts.accept_threshold is not None:
        return opts.accept_threshold

    def chi2_cap(n: int, sigma: float) -> float:
        return sigma**2 * (n + 3.0 * math.sqrt(2.0 * n))

    return 1e-6 + spec.w_d * chi2_cap(spec.n_distance, opts.sigma_distance) + spec.w_a * chi2_cap(
        spec.n_heading, opts.sigma_heading
    )


def _horizontal_ranges(rounds: Sequence[ObservationRound], members: Sequence[int]):
    """First-step horizontal ranges (M, M) with gaps borrowed from later rounds.

    Also returns, per missing first-step pair, ``(a, b, lag)`` where ``lag``
    is the time to the round the range was borrowed from (``None`` when no
    round measured it and the median range was used).
    """
    M = len(members)
    D = np.zeros((M, M))
    gaps, present = [], []
    t0 = rounds[0].timestamp
    for a in range(M):
        for b in range(a + 1, M):
            i, j = members[a], members[b]
            src = next((r for r in rounds if r.distances.get(i, j) is not None), None)
            if src is not rounds[0]:
                gaps.append((a, b, None if src is None else src.timestamp - t0))
            if src is None:
                D[a, b] = np.nan
                continue
            d = src.distances.get(i, j)
            dz = src.depths[i] - src.depths[j]
            D[a, b] = math.sqrt(max(d * d - dz * dz, 0.0))
            present.append(D[a, b])
    fill = float(np.median(present)) if present else 1.0
    D = np.where(np.isnan(D), fill, D)
    return D + D.T, gaps


def _embed(D: np.ndarray) -> np.ndarray:
    """Classical multidimensional scaling into the plane, first point at zero."""
    M = len(D)
    J = np.eye(M) - 1.0 / M
    B = -0.5 * J @ (D * D) @ J
    w, V = np.linalg.eigh(B)
    top = np.argsort(w)[::-1][:2]
    X = V[:, top] * np.sqrt(np.maximum(w[top], 0.0))
    if X.shape[1] < 2:
        X = np.hstack([X, np.zeros((M, 2 - X.shape[1]))])
    return X - X[0]


def horizontal_placement(
    round0: ObservationRound, members: Sequence[int], later: Sequence[ObservationRound] = ()
) -> np.ndarray:
    """Planar placement (M, 2) reproducing the round's horizontal ranges.

    Classical multidimensional scaling on ranges with the measured depth
    difference removed. A missing range is borrowed from the earliest of
    ``later`` rounds that measured it, and otherwise filled with the median
    range. Orientation and handedness are arbitrary; the first member is at
    zero.
    """
    return _embed(_horizontal_ranges([round0, *later], members)[0])


def placement_candidates(
    rounds: Sequence[ObservationRound], members: Sequence[int], v_max: float, limit: int = 25
) -> list[np.ndarray]:
    """First-step placements covering the uncertainty of borrowed ranges.

    A range borrowed from a round ``lag`` seconds later can differ from the
    first-step range by up to ``2 * v_max * lag``; each such pair is tried at
    five (or three) values across that band, as long as the product of
    choices stays within ``limit``. Complete first-step ranges give a single
    placement.
    """
    D, gaps = _horizontal_ranges(rounds, members)
    band = [(a, b, 2.0 * v_max * lag) for a, b, lag in gaps if lag is not None]
    if not band:
        return [_embed(D)]
    levels = next((k for k in (5, 3) if k ** len(band) <= limit), 1)
    offs = np.linspace(-1.0, 1.0, levels) if levels > 1 else np.zeros(1)
    out = []
    for combo in itertools.product(offs, repeat=len(band)):
        Dc = D.copy()
        for (a, b, w), o in zip(band, combo):
            Dc[a, b] = Dc[b, a] = max(D[a, b] + o * w, 0.0)
        out.append(_embed(Dc))
    return out


def _rotate(X: np.ndarray, theta: float, mirror: bool) -> np.ndarray:
    if mirror:
        X = X * np.array([1.0, -1.0])
    c, s = math.cos(theta), math.sin(theta)
    return X @ np.array([[c, s], [-s, c]])


def propagate(
    P0: np.ndarray, rounds: Sequence[ObservationRound], members: Sequence[int], speeds: np.ndarray
) -> np.ndarray:
    """Dead-reckon a start along the measured headings; ``speeds`` is (H, M)."""
    H = len(rounds) - 1
    P = np.zeros((H + 1, len(members), 2))
    P[0] = P0
    for h in range(H):
        r = rounds[h]
        dt = rounds[h + 1].timestamp - r.timestamp
        for m, i in enumerate(members):
            step = speeds[h, m] * dt if r.moving[i] else 0.0
            P[h + 1, m] = P[h, m] + step * np.array([math.cos(r.headings[i]), math.sin(r.headings[i])])
    return P


def _extend(P: np.ndarray, rounds: Sequence[ObservationRound], members: Sequence[int]) -> np.ndarray:
    """Extend a start covering fewer steps by repeating its last speeds."""
    H = len(rounds) - 1
    have = len(P) - 1
    if have >= H:
        return P[: H + 1]
    if have >= 1:
        dt = rounds[have].timestamp - rounds[have - 1].timestamp
        last = np.linalg.norm(P[have] - P[have - 1], axis=1) / dt
    else:
        last = np.zeros(len(members))
    tail = propagate(P[have], rounds[have:], members, np.tile(last, (H - have, 1)))
    return np.concatenate([P, tail[1:]])


def near_pair_anchor(
    rounds: Sequence[ObservationRound], members: Sequence[int], threshold: float
) -> tuple[int, float]:
    """Closest member to the first one and its horizontal range, if below ``threshold``."""
    r0 = rounds[0]
    origin = members[0]
    best = None
    for j in members[1:]:
        d = r0.distances.get(origin, j)
        if d is None or d >= threshold:
            continue
        if best is None or d < best[1]:
            best = (j, d)
    if best is None:
        raise NoClosePair(f"no member within {threshold} m of robot {origin}")
    j, d = best
    dz = r0.depths[origin] - r0.depths[j]
    return j, math.sqrt(max(d * d - dz * dz, 0.0))


def _speed_inits(M: int, limit: int = 27) -> np.ndarray:
    """Initial step fractions for the speed fit: a small product grid over members."""
    levels = (0.15, 0.5, 0.85) if 3**M <= limit else (0.2, 0.8)
    grid = np.array(np.meshgrid(*[levels] * M, indexing="ij")).reshape(M, -1).T
    if len(grid) > limit:
        grid = grid[np.linspace(0, len(grid) - 1, limit).round().astype(int)]
    return grid


def _gn_speeds(Q, s, unit, moving, pairs, d, dz, reach, iters):
    """Bounded Gauss-Newton on step lengths ``s`` (T, M); returns them and their squared misfit."""
    ia, ib = pairs[:, 0], pairs[:, 1]
    K, M = len(pairs), Q.shape[1]
    eye = np.eye(M)

    def residual(s):
        w = (Q[:, ia] - Q[:, ib]) + s[:, ia, None] * unit[ia] - s[:, ib, None] * unit[ib]
        rng = np.sqrt((w * w).sum(-1) + dz**2)
        return w, rng, rng - d

    for _ in range(iters):
        w, rng, r = residual(s)
        g = w / np.maximum(rng, 1e-12)[..., None]
        J = np.zeros((len(s), K, M))
        J[:, np.arange(K), ia] = (g * unit[ia][None]).sum(-1)
        J[:, np.arange(K), ib] -= (g * unit[ib][None]).sum(-1)
        JtJ = J.transpose(0, 2, 1) @ J + 1e-9 * eye
        step = np.linalg.solve(JtJ, (J.transpose(0, 2, 1) @ r[..., None]))[..., 0]
        s_new = np.clip(s - step, 0.0, reach) * moving[None]
        done = np.abs(s_new - s).max() < 1e-12
        s = s_new
        if done:
            break
    _, _, r = residual(s)
    return s, (r * r).sum(-1)


def _fit_speeds(
    Q: np.ndarray, unit: np.ndarray, moving: np.ndarray, pairs: np.ndarray, d: np.ndarray, dz: np.ndarray,
    reach: float, level: float = 1e-10, iters: int = 15,
) -> np.ndarray:
    """Batched bounded Gauss-Newton for one step's speeds.

    ``Q`` is (T, M, 2) positions at the step start for T trial placements;
    returns (T, M) step lengths in ``[0, reach]`` that best reproduce the
    ranges ``d`` (with depth differences ``dz``) at the step end. The range
    equations have several roots, so trials whose fit from mid-range speeds
    misses ``level`` are refitted from a few other speed combinations and the
    best fit is kept.
    """
    T, M, _ = Q.shape
    s = np.where(moving, 0.5 * reach, 0.0)[None, :].repeat(T, 0)
    if not len(pairs):
        return s
    s, err = _gn_speeds(Q, s, unit, moving, pairs, d, dz, reach, iters)
    bad = np.flatnonzero(err > level)
    if len(bad):
        inits = _speed_inits(M) * reach * moving[None]
        S = len(inits)
        s2, err2 = _gn_speeds(np.repeat(Q[bad], S, axis=0), np.tile(inits, (len(bad), 1)),
                              unit, moving, pairs, d, dz, reach, iters)
        err2, s2 = err2.reshape(len(bad), S), s2.reshape(len(bad), S, M)
        k = err2.argmin(1)
        better = err2[np.arange(len(bad)), k] < err[bad]
        s[bad[better]] = s2[np.arange(len(bad)), k][better]
    return s


def rotation_scan(
    rounds: Sequence[ObservationRound],
    layout: VariableLayout,
    opts: SolveOptions,
    angles: np.ndarray,
    mirrored: np.ndarray,
    base: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Dead-reckoned trajectories for trial orientations of the first step.

    Trial ``t`` places the first step's horizontal layout (``base``, by
    default :func:`horizontal_placement`) rotated by
    ``angles[t]`` (after a mirror when ``mirrored[t]``) and then fits each
    step's speeds to the next round's ranges. Returns trajectories
    (T, H+1, M, 2) and their summed squared range misfit (T,).
    """
    members = layout.members
    H = layout.n_steps
    if base is None:
        base = horizontal_placement(rounds[0], members, rounds[1:])
    X = np.where(np.asarray(mirrored)[:, None, None], base * np.array([1.0, -1.0]), base)
    c, s = np.cos(angles), np.sin(angles)
    rot = np.stack([np.stack([c, s], -1), np.stack([-s, c], -1)], -2)  # row-vector rotation
    P0 = np.einsum("tmd,tde->tme", X, rot)
    T = len(P0)
    traj = np.zeros((T, H + 1, len(members), 2))
    traj[:, 0] = P0
    misfit = np.zeros(T)
    for h in range(H):
        r, nxt = rounds[h], rounds[h + 1]
        dt = nxt.timestamp - r.timestamp
        moving = np.array([bool(r.moving[i]) for i in members])
        unit = np.array([[math.cos(r.headings[i]), math.sin(r.headings[i])] for i in members]) * moving[:, None]
        pairs, d, dz = [], [], []
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                dd = nxt.distances.get(members[a], members[b])
                if dd is not None:
                    pairs.append((a, b))
                    d.append(dd)
                    dz.append(nxt.depths[members[a]] - nxt.depths[members[b]])
        pairs_a = np.array(pairs, dtype=int).reshape(-1, 2)
        d_a, dz_a = np.array(d), np.array(dz)
        level = 1e-10 + len(d_a) * (3.0 * opts.sigma_distance) ** 2
        s = _fit_speeds(traj[:, h], unit, moving, pairs_a, d_a, dz_a, opts.v_max * dt, level)
        traj[:, h + 1] = traj[:, h] + s[..., None] * unit[None]
        if len(pairs_a):
            w = traj[:, h + 1, pairs_a[:, 0]] - traj[:, h + 1, pairs_a[:, 1]]
            misfit += ((np.sqrt((w * w).sum(-1) + dz_a**2) - d_a) ** 2).sum(-1)
    return traj, misfit


def _refine(rounds, layout, opts, angles, mirrored, base, step, rounds_left=2, fan=10):
    """Zoom each trial angle onto its local misfit minimum."""
    for _ in range(rounds_left):
        offs = np.linspace(-step, step, 2 * fan + 1)
        A = (angles[:, None] + offs[None, :]).ravel()
        Mi = np.repeat(mirrored, len(offs))
        _, mis = rotation_scan(rounds, layout, opts, A, Mi, base)
        best = mis.reshape(len(angles), -1).argmin(1)
        angles = angles + offs[best]
        step = step / fan
    return angles


def initial_points(
    rounds: Sequence[ObservationRound],
    layout: VariableLayout,
    opts: SolveOptions,
    rng: np.random.Generator,
    extra: Sequence[np.ndarray] = (),
    n_angles: int = 180,
) -> list[np.ndarray]:
    """Start positions: supplied ones, then the best orientations of a rotation scan.

    The scan covers ``n_angles`` orientations in each handedness with a
    random phase. Trials already fitting the ranges are all kept and thinned
    evenly along the sweep, so a continuum of solutions is sampled end to
    end; the remaining slots go to the deepest local minima of the sweep,
    each zoomed onto its minimum. With a pinned near pair only orientations
    that place the pinned robot near its pin are used.
    """
    members = layout.members
    starts = [_extend(np.asarray(P, dtype=float), rounds, members) for P in extra]
    width = 2 * math.pi / n_angles
    phase = rng.uniform(0.0, width)
    angles = np.tile(phase + np.arange(n_angles) * width, 2)
    mirrored = np.repeat([False, True], n_angles)
    bases = placement_candidates(rounds, members, opts.v_max)
    scans = [rotation_scan(rounds, layout, opts, angles, mirrored, X) for X in bases]
    traj = np.concatenate([t for t, _ in scans])
    misfit = np.concatenate([m for _, m in scans])
    which = np.repeat(np.arange(len(bases)), len(angles))
    angles, mirrored = np.tile(angles, len(bases)), np.tile(mirrored, len(bases))
    pinned = [(members.index(r), xy) for (r, h), xy in layout.pins.items() if h == 0 and r != members[0]]
    if pinned:
        gap = np.zeros(len(traj))
        for m, xy in pinned:
            scale = max(1e-9, float(np.linalg.norm(xy)))
            gap = np.maximum(gap, np.linalg.norm(traj[:, 0, m] - np.asarray(xy), axis=1) / scale)
        misfit = np.where(gap <= 0.1, misfit, np.inf)

    n = opts.multistart
    level = 1e-6 + 9.0 * opts.sigma_distance**2
    good = np.flatnonzero(misfit <= level)
    picks: list[int] = []
    if len(good):
        idx = np.linspace(0, len(good) - 1, min(n, len(good))).round().astype(int)
        picks += sorted({int(good[k]) for k in idx})
    starts += [traj[k] for k in picks]
    # local minima along each handedness' circular sweep
    ring = misfit.reshape(-1, n_angles)
    is_min = ((ring <= np.roll(ring, 1, 1)) & (ring <= np.roll(ring, -1, 1))).ravel() & np.isfinite(misfit)
    minima = [int(k) for k in np.argsort(np.where(is_min, misfit, np.inf), kind="stable")
              if is_min[k] and int(k) not in picks]
    minima = np.array(minima[: max(0, n - len(picks))], dtype=int)
    for j, X in enumerate(bases):
        sel = minima[which[minima] == j]
        if len(sel):
            fine = _refine(rounds, layout, opts, angles[sel], mirrored[sel], X, width)
            starts += list(rotation_scan(rounds, layout, opts, fine, mirrored[sel], X)[0])
    return starts


def _descend(v0: np.ndarray, cons: ConstraintSet, spec: ObjectiveSpec, opts: SolveOptions) -> np.ndarray:
    mu = math.sqrt(opts.penalty)
    A, b, tau = cons.A, cons.b, cons.tau

    def fun(v):
        r, _ = smooth_residuals(v, spec)
        pen = mu * np.maximum(A @ v - b - tau, 0.0)
        return np.concatenate([r, pen])

    def jac(v):
        _, J = smooth_residuals(v, spec)
        active = (A @ v - b - tau) > 0.0
        return np.vstack([J, mu * A * active[:, None]])

    res = least_squares(fun, v0, jac=jac, method="lm", max_nfev=opts.max_iter, xtol=1e-12, ftol=1e-14, gtol=1e-12)
    return res.x


def _polish(v0: np.ndarray, cons: ConstraintSet, spec: ObjectiveSpec, opts: SolveOptions) -> np.ndarray:
    """SQP refinement honouring the linear constraints exactly.

    The penalised descent crawls along active speed and heading bounds; SQP
    moves along them, which matters for the narrow feasible valleys of
    noiseless instances.
    """

    def fun(v):
        r, J = smooth_residuals(v, spec)
        return float(r @ r), 2.0 * (J.T @ r)

    A, b = cons.A, cons.b + cons.tau
    ineq = {"type": "ineq", "fun": lambda v: b - A @ v, "jac": lambda v: -A}
    res = minimize(fun, v0, jac=True, method="SLSQP", constraints=[ineq] if len(A) else [],
                   options={"maxiter": 5 * opts.max_iter, "ftol": 1e-16})
    return res.x


def _pareto_filter(sols: list[Solution], tol: float) -> list[Solution]:
    keep = []
    for s in sols:
        dominated = any(
            o is not s and o.terms[0] <= s.terms[0] - tol and o.terms[1] <= s.terms[1] - tol for o in sols
        )
        if not dominated:
            keep.append(s)
    return keep


NULL_TOL = 1e-6  # singular values below this fraction of the largest span a flat direction


class _Acceptor:
    """Descent from a start followed by the acceptance test."""

    def __init__(self, constraints: ConstraintSet, spec: ObjectiveSpec, opts: SolveOptions):
        self.cons, self.spec, self.opts = constraints, spec, opts
        self.thr = acceptance_threshold(spec, opts)
        self.viol_cap = constraints.tau * max(1, len(constraints))

    def __call__(self, v0: np.ndarray) -> tuple[np.ndarray, Solution | None]:
        cons, spec, opts, thr = self.cons, self.spec, self.opts, self.thr
        v = _descend(v0, cons, spec, opts)
        terms = multi_objective(v, spec)
        obj = terms[0] + terms[1]
        viol = cons.total_violation(v)
        if (obj > thr or viol > self.viol_cap) and obj <= POLISH_LEVEL + 2.0 * thr:
            w = _polish(v, cons, spec, opts)
            wterms = multi_objective(w, spec)
            wviol = cons.total_violation(w)
            if wviol <= self.viol_cap and wterms[0] + wterms[1] < obj:
                v, terms, obj, viol = w, wterms, wterms[0] + wterms[1], wviol
        if not (np.isfinite(obj) and viol <= self.viol_cap):
            return v, None
        ok = (terms[0] <= thr and terms[1] <= thr) if opts.multi_objective else obj <= thr
        return v, (Solution(cons.layout.positions(v), obj, viol, terms) if ok else None)


def flat_directions(v: np.ndarray, spec: ObjectiveSpec) -> np.ndarray:
    """Orthonormal directions (k, n) along which the residuals do not change to first order."""
    _, J = smooth_residuals(v, spec)
    n = J.shape[1]
    _, sv, Vt = np.linalg.svd(J, full_matrices=True)
    top = sv[0] if len(sv) else 0.0
    rank = int(np.sum(sv > NULL_TOL * top)) if top > 0 else 0
    return Vt[rank:n]


def walk_family(v: np.ndarray, accept: _Acceptor, explored: list[np.ndarray]) -> list[Solution]:
    """Samples of the solution family through ``v``, spaced about half the uniqueness radius.

    When the residual Jacobian has flat directions the accepted point is one
    member of a continuum of equally good solutions. Each flat direction is
    followed both ways: step, re-converge, and keep going while the result is
    still accepted; the step is halved on failure down to an eighth of its
    size. Walking stops at the constraints or where the objective rises past
    the acceptance threshold.
    """
    layout, opts = accept.cons.layout, accept.opts
    n_pos = layout.positions(np.zeros(layout.n_vars)).size // 2
    delta = 0.5 * opts.rho
    out: list[Solution] = []
    for d0 in flat_directions(v, accept.spec):
        for sign in (1.0, -1.0):
            cur, d = v, sign * d0
            for _ in range(opts.walk_steps):
                step, moved = delta, None
                while step >= delta / 8:
                    rms = np.linalg.norm(d) / math.sqrt(n_pos)
                    w, sol = accept(cur + step * d / rms)
                    gap = np.linalg.norm(w - cur) / math.sqrt(n_pos)
                    if sol is not None and gap >= step / 4 and (w - cur) @ d > 0:
                        moved = (w, sol)
                        break
                    step /= 2
                if moved is None:
                    break
                w, sol = moved
                if any(np.linalg.norm(w - e) / math.sqrt(n_pos) < 0.25 * opts.rho for e in explored):
                    break
                explored.append(w)
                out.append(sol)
                nxt = flat_directions(w, accept.spec)
                if not len(nxt):
                    break
                # continue along the flat direction closest to the last move
                proj = nxt @ (w - cur)
                k = int(np.argmax(np.abs(proj)))
                d = nxt[k] * (1.0 if proj[k] >= 0 else -1.0)
                cur = w
    return out


def solve_continuous(
    constraints: ConstraintSet,
    spec: ObjectiveSpec,
    opts: SolveOptions,
    rounds: Sequence[ObservationRound],
    starts: Sequence[np.ndarray] = (),
) -> SolutionSet:
    """Multi-start penalised descent, acceptance filtering and clustering.

    ``starts`` are optional extra start positions (for example the
    representatives of a solve over fewer steps); shorter ones are extended
    along the headings. With ``opts.explore`` every accepted solution that
    sits on a flat family is walked to its ends, so a continuum of solutions
    shows up as several clusters rather than as whichever member the starts
    happened to reach.
    """
    if constraints.conflicts:
        raise NoSolutionFound(f"pinned coordinates alone break {len(constraints.conflicts)} constraint(s), "
                              f"first {constraints.conflicts[0]}")
    layout = constraints.layout
    rng = np.random.default_rng(opts.seed)
    extra = list(starts)
    if opts.mode == "hybrid":
        extra += coarse_grid_starts(rounds, layout, opts)
    points = initial_points(rounds, layout, opts, rng, extra)
    accept = _Acceptor(constraints, spec, opts)

    accepted: list[Solution] = []
    converged = 0
    explored: list[np.ndarray] = []
    walked = 0
    for P in points:
        v, sol = accept(layout.flatten(P))
        if sol is None:
            continue
        converged += 1
        accepted.append(sol)
        if opts.explore and not any(
            rms_distance(sol.positions, layout.positions(e)) < 0.25 * opts.rho for e in explored
        ):
            explored.append(v)
            family = walk_family(v, accept, explored)
            walked += len(family)
            accepted += family
    if opts.multi_objective:
        accepted = _pareto_filter(accepted, opts.tie_eps)
    if not accepted:
        raise NoSolutionFound(
            f"none of {len(points)} starts reached objective <= {accept.thr:.3g} "
            f"with violation <= {accept.viol_cap:.3g}"
        )
    stats = {"starts": len(points), "accepted": converged, "family_samples": walked, "threshold": accept.thr}
    return cluster(layout, accepted, opts.rho, stats)


def coarse_grid_starts(
    rounds: Sequence[ObservationRound], layout: VariableLayout, opts: SolveOptions
) -> list[np.ndarray]:
    """Best coarse-grid placements of the first step, used to seed descent."""
    from .discrete import solve_discrete_bruteforce  # circular at import time

    steps = min(1, layout.n_steps)
    pins = {k: v for k, v in layout.pins.items() if k[1] <= steps}
    sub = VariableLayout(layout.members, steps, pins)
    coarse = opts.replace(grid=opts.hybrid_grid, tau=max(opts.tau, opts.hybrid_grid))
    sub_rounds = list(rounds[: steps + 1])
    cons = build_constraints(sub_rounds, sub, coarse)
    spec = build_objective(sub_rounds, sub, opts.w_d, opts.w_a)
    reach = max((r.distances.values[np.isfinite(r.distances.values)].max() for r in sub_rounds), default=opts.radius)
    coarse = coarse.replace(radius=min(opts.radius, reach + opts.hybrid_grid))
    try:
        found = solve_discrete_bruteforce(cons, spec, coarse, keep=opts.hybrid_keep)
    except (BudgetExceeded, NoSolutionFound):  # coarse seeds are optional
        return []
    return [s.positions for s in found.solutions]
