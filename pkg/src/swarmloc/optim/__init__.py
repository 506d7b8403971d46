"""Planar multi-step localisation by constrained residual minimisation."""
import math

from .constraints import DISTANCE, HEADING, SPEED, ConstraintSet, build_constraints
from .continuous import acceptance_threshold, horizontal_placement, solve_continuous
from .discrete import grid_values, solve_discrete_bruteforce
from .layout import SolveOptions, VariableLayout, order_members
from .objective import ObjectiveSpec, build_objective, multi_objective, objective
from .solution import Solution, SolutionSet, cluster, rms_distance
from .tracks import NearPairAnchor, TrackRecovery, approx_near_pair, recover_tracks_and_speeds

__all__ = [
    "DISTANCE", "HEADING", "SPEED", "ConstraintSet", "build_constraints",
    "acceptance_threshold", "horizontal_placement", "solve_continuous",
    "grid_values", "solve_discrete_bruteforce",
    "SolveOptions", "VariableLayout", "order_members",
    "ObjectiveSpec", "build_objective", "multi_objective", "objective",
    "Solution", "SolutionSet", "cluster", "rms_distance",
    "NearPairAnchor", "TrackRecovery", "approx_near_pair", "recover_tracks_and_speeds",
    "solve", "solve_with_near_pair",
]


def solve(rounds, members, opts: SolveOptions | None = None, pins=None, starts=()):
    """Build the layout, constraints and objective, then run the configured solver."""
    opts = opts or SolveOptions()
    members = order_members(rounds[0], members)
    layout = VariableLayout(tuple(members), len(rounds) - 1, pins)
    cons = build_constraints(rounds, layout, opts)
    spec = build_objective(rounds, layout, opts.w_d, opts.w_a)
    if opts.mode == "discrete":
        return solve_discrete_bruteforce(cons, spec, opts)
    return solve_continuous(cons, spec, opts, rounds, starts)


def solve_with_near_pair(rounds, members, opts: SolveOptions | None = None):
    """Solve the reduced problem with the member nearest the origin pinned on the +x axis.

    The pin is an approximation, so the reduced data are generally not
    exactly consistent: every converged minimum within the violation cap is
    accepted and ``best`` is the answer. Returns ``(anchor, solution_set)``;
    raises :class:`NoClosePair` when no member is close enough.
    """
    opts = (opts or SolveOptions()).replace(accept_threshold=math.inf, explore=False)
    anchor = approx_near_pair(rounds, members, opts)
    return anchor, solve(rounds, members, opts, pins=anchor.pins)
