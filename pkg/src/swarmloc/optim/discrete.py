"""Exhaustive search over a square grid with constraint and bound pruning.

Unknowns are assigned one at a time in layout order. Before a variable is
branched on, every constraint row whose last unknown it is narrows its
domain; every objective term it completes is added to the partial objective,
which never decreases and so bounds every completion from below. Subtrees
whose bound exceeds the incumbent are cut, so the search returns the exact
grid minimisers. Without an incumbent the search runs in passes with a
growing objective bound, which keeps the first dives from exhausting
subtrees that cannot hold a good solution.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass

import numpy as np

from ..errors import BudgetExceeded, NoSolutionFound
from ..geometry import wrap_angles
from .constraints import ConstraintSet
from .layout import SolveOptions
from .objective import ObjectiveSpec, multi_objective
from .solution import Solution, SolutionSet, cluster

DOMAIN_SLACK = 1e-9  # widen interval bounds so rounding never removes a feasible value
WIDEN = 100.0  # growth of the objective bound between search passes


def grid_values(opts: SolveOptions) -> np.ndarray:
    """Grid coordinates ``k * grid`` for integer ``k`` in ``[-n, n)``, ``n = radius / grid``."""
    n = int(round(opts.radius / opts.grid))
    return np.arange(-n, n) * opts.grid


@dataclass
class _Term:
    weight: float
    kind: str  # "d" or "a"
    coords: list  # [(var index or -1, fixed value)] for x_a, y_a, x_b, y_b
    param: float  # measured range or heading
    dz: float = 0.0


def _coord(layout, h, m, axis):
    k = int(layout.index[h, m, axis])
    return (k, 0.0 if k >= 0 else float(layout.fixed[h, m, axis]))


def _terms(spec: ObjectiveSpec) -> list[_Term]:
    lay = spec.layout
    out = []
    for h, i, j, d, dz in zip(spec.pair_h, spec.pair_i, spec.pair_j, spec.pair_d, spec.pair_dz):
        coords = [_coord(lay, h, i, 0), _coord(lay, h, i, 1), _coord(lay, h, j, 0), _coord(lay, h, j, 1)]
        out.append(_Term(spec.w_d, "d", coords, float(d), float(dz)))
    for h, i, a in zip(spec.head_h, spec.head_i, spec.head_alpha):
        coords = [_coord(lay, h, i, 0), _coord(lay, h, i, 1), _coord(lay, h + 1, i, 0), _coord(lay, h + 1, i, 1)]
        out.append(_Term(spec.w_a, "a", coords, float(a)))
    return out


def _term_value(t: _Term, vals: list, threshold: float):
    xa, ya, xb, yb = vals
    dx, dy = xa - xb, ya - yb
    if t.kind == "d":
        r = np.sqrt(dx * dx + dy * dy + t.dz * t.dz) - t.param
    else:
        r = wrap_angles(np.arctan2(-dy, -dx) - t.param)
        r = np.where(np.hypot(dx, dy) < threshold, 0.0, r)
    return t.weight * r * r


def solve_discrete_bruteforce(
    constraints: ConstraintSet,
    spec: ObjectiveSpec,
    opts: SolveOptions,
    keep: int | None = None,
) -> SolutionSet:
    """Global grid minimisers of the objective subject to the constraints.

    Every coordinate ranges over :func:`grid_values` and each robot's position
    must lie within ``opts.radius`` of the origin. All assignments tied with
    the minimum (within ``opts.tie_eps``) are returned; with ``keep`` the
    ``keep`` best feasible assignments are returned instead. Raises
    :class:`BudgetExceeded` once more than ``opts.node_budget`` nodes have
    been generated.
    """
    if constraints.conflicts:
        raise NoSolutionFound(f"pinned coordinates alone break {len(constraints.conflicts)} constraint(s), "
                              f"first {constraints.conflicts[0]}")
    layout = constraints.layout
    n = layout.n_vars
    grid = grid_values(opts)
    R2 = opts.radius**2 + DOMAIN_SLACK
    tau = constraints.tau
    A, b = constraints.A, constraints.b

    # rows and terms grouped by the last unknown they involve
    last_var = [int(np.flatnonzero(row).max()) for row in A]
    rows_at = [[r for r, k in enumerate(last_var) if k == kk] for kk in range(n)]
    terms = _terms(spec)
    base = 0.0
    terms_at: list[list[_Term]] = [[] for _ in range(n)]
    for t in terms:
        ks = [k for k, _ in t.coords if k >= 0]
        if ks:
            terms_at[max(ks)].append(t)
        else:
            base += float(_term_value(t, [c for _, c in t.coords], spec.threshold))
    # y unknown -> its x partner, for the disk bound (pins fix both coordinates)
    partner = {int(ky): int(kx) for kx, ky in layout.index.reshape(-1, 2) if ky >= 0}

    stats = {"nodes": 0, "leaves": 0, "pruned_constraint": 0, "pruned_bound": 0, "passes": 1,
             "grid_values": len(grid), "log10_product": n * math.log10(len(grid))}
    best: list[tuple[float, np.ndarray]] = []  # sorted (objective, v)
    v = np.zeros(n)

    limit = [0.0]  # bound of the current widening pass

    def cutoff() -> float:
        if keep is None:
            return best[0][0] + opts.tie_eps if best else limit[0]
        return best[-1][0] if len(best) >= keep else limit[0]

    def domain(k: int) -> np.ndarray:
        lo, hi = -math.inf, math.inf
        for r in rows_at[k]:
            a = A[r, k]
            rest = b[r] + tau - A[r, :k] @ v[:k]
            if a > 0:
                hi = min(hi, rest / a)
            else:
                lo = max(lo, rest / a)
        if k in partner:
            x = v[partner[k]]
            span = math.sqrt(max(R2 - x * x, 0.0))
            lo, hi = max(lo, -span), min(hi, span)
        if lo > hi + DOMAIN_SLACK:
            return grid[:0]
        i0 = np.searchsorted(grid, lo - DOMAIN_SLACK, "left")
        i1 = np.searchsorted(grid, hi + DOMAIN_SLACK, "right")
        vals = grid[i0:i1]
        if len(vals) and rows_at[k]:
            rows = rows_at[k]
            ex = A[rows, :k] @ v[:k]
            ok = np.all(ex[:, None] + A[rows, k][:, None] * vals[None, :] - b[rows][:, None] <= tau, axis=0)
            vals = vals[ok]
        return vals

    def added(k: int, vals: np.ndarray) -> np.ndarray:
        total = np.zeros(len(vals))
        for t in terms_at[k]:
            cv = [vals if idx == k else (v[idx] if idx >= 0 else c) for idx, c in t.coords]
            total += _term_value(t, cv, spec.threshold)
        return total

    def leaf(partial: float):
        stats["leaves"] += 1
        if not constraints.feasible(v):
            return
        terms2 = multi_objective(v, spec)
        obj = terms2[0] + terms2[1]
        if obj > cutoff():
            return
        best.append((obj, v.copy()))
        best.sort(key=lambda e: (e[0], tuple(e[1])))
        if keep is None:
            lim = best[0][0] + opts.tie_eps
            best[:] = [e for e in best if e[0] <= lim]
        else:
            del best[keep:]

    def descend(k: int, partial: float):
        if k == n:
            leaf(partial)
            return
        vals = domain(k)
        stats["pruned_constraint"] += len(grid) - len(vals)
        if not len(vals):
            return
        child = partial + added(k, vals)
        order = np.argsort(child, kind="stable")
        stats["nodes"] += len(vals)
        if stats["nodes"] > opts.node_budget:
            raise BudgetExceeded(
                f"grid search generated more than {opts.node_budget} nodes; the instance is under-constrained "
                "for brute force at this grid size"
            )
        for pos, idx in enumerate(order):
            if child[idx] > cutoff():
                stats["pruned_bound"] += len(order) - pos
                break
            v[k] = vals[idx]
            descend(k + 1, float(child[idx]))

    # Widen the bound until a pass finds enough solutions. A pass with bound
    # c explores every assignment with objective <= c, so the first pass that
    # succeeds already holds the exact minimisers.
    rec = sys.getrecursionlimit()
    sys.setrecursionlimit(max(rec, n + 100))
    try:
        c = max(base, 0.0) + max(opts.tie_eps, 1e-12)
        while True:
            limit[0] = c
            best.clear()
            descend(0, base)
            enough = len(best) >= (keep or 1)
            if enough and (keep is not None or best[0][0] + opts.tie_eps <= c) or math.isinf(c):
                break
            c = math.inf if c > 1e12 else c * WIDEN
            stats["passes"] += 1
    finally:
        sys.setrecursionlimit(rec)

    if not best:
        raise NoSolutionFound("no grid assignment satisfies the constraints")
    sols = []
    for obj, vec in best:
        terms2 = multi_objective(vec, spec)
        sols.append(Solution(layout.positions(vec), obj, constraints.total_violation(vec), terms2))
    return cluster(layout, sols, opts.rho, stats)
