"""Linear inequality constraints over the planar unknowns.

Three kinds are emitted:

* heading-sign: a robot's x (y) coordinate increases between steps when the
  cosine (sine) of its heading is clearly positive, and decreases when it is
  clearly negative;
* distance-bound: coordinate differences of a measured pair are bounded by
  the measured range;
* speed-bound: per-axis displacement per step is bounded by ``v_max * dt``.

Each row reads ``a . v <= b``. Strict inequalities are closed off with
``eps_slack``. A row is satisfied when its excess ``a . v - b`` is at most
``tau``. Rows whose unknowns are all pinned are kept only as conflicts
when the pins alone break them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..sim import ObservationRound
from .layout import SolveOptions, VariableLayout

HEADING = "heading-sign"
DISTANCE = "distance-bound"
SPEED = "speed-bound"


@dataclass(frozen=True)
class ConstraintSet:
    layout: VariableLayout
    A: np.ndarray  # (m, n_vars)
    b: np.ndarray  # (m,)
    kinds: tuple[str, ...]
    sources: tuple[tuple, ...]  # (robot, step) or (robot_i, robot_j, step), plus axis
    tau: float
    conflicts: tuple[tuple, ...] = ()  # sources of rows broken by pinned coordinates alone

    def __len__(self) -> int:
        return len(self.b)

    def excess(self, v: np.ndarray) -> np.ndarray:
        return self.A @ v - self.b

    def violations(self, v: np.ndarray) -> np.ndarray:
        """Per-row violation ``max(0, a . v - b)``."""
        return np.maximum(self.excess(v), 0.0)

    def total_violation(self, v: np.ndarray) -> float:
        return float(self.violations(v).sum())

    def satisfied(self, v: np.ndarray) -> np.ndarray:
        return self.excess(v) <= self.tau

    def feasible(self, v: np.ndarray) -> bool:
        return not self.conflicts and bool(np.all(self.satisfied(v)))

    def of_kind(self, kind: str) -> np.ndarray:
        return np.array([k == kind for k in self.kinds], dtype=bool)

    def variables(self) -> list[np.ndarray]:
        """Indices of the unknowns each row touches."""
        return [np.flatnonzero(row) for row in self.A]


class _Builder:
    def __init__(self, layout: VariableLayout, tau: float):
        self.layout = layout
        self.tau = tau
        self.rows: list[np.ndarray] = []
        self.b: list[float] = []
        self.kinds: list[str] = []
        self.sources: list[tuple] = []
        self.conflicts: list[tuple] = []

    def add(self, terms: Sequence[tuple[int, int, int, float]], bound: float, kind: str, source: tuple):
        """Add ``sum(coef * coord(robot, h, axis)) <= bound``; pinned coordinates fold into ``bound``."""
        row = np.zeros(self.layout.n_vars)
        for robot, h, axis, coef in terms:
            k = self.layout.var(robot, h, axis)
            if k is None:
                bound -= coef * self.layout.fixed[h, self.layout.slot(robot), axis]
            else:
                row[k] += coef
        if not row.any():
            if bound < -self.tau:
                self.conflicts.append(source)
            return
        self.rows.append(row)
        self.b.append(bound)
        self.kinds.append(kind)
        self.sources.append(source)


def build_constraints(
    rounds: Sequence[ObservationRound], layout: VariableLayout, opts: SolveOptions
) -> ConstraintSet:
    """Emit every heading-sign, distance-bound and speed-bound row.

    Missing ranges emit nothing, and neither do stationary robots' headings or
    heading components inside the ``eps_dir`` deadband.
    """
    H = layout.n_steps
    if len(rounds) != H + 1:
        raise ValueError(f"need {H + 1} rounds for {H} steps, got {len(rounds)}")
    times = [r.timestamp for r in rounds]
    if any(t1 <= t0 for t0, t1 in zip(times, times[1:])):
        raise ValueError("rounds must be strictly time-ordered")
    bld = _Builder(layout, opts.tau)
    members = layout.members

    for h in range(H):
        r = rounds[h]
        dt = times[h + 1] - times[h]
        reach = opts.v_max * dt
        for i in members:
            if r.moving[i]:
                comps = (math.cos(r.headings[i]), math.sin(r.headings[i]))
                for axis, c in enumerate(comps):
                    if abs(c) <= opts.eps_dir:
                        continue
                    s = 1.0 if c > 0 else -1.0
                    # s * (p[h+1] - p[h]) > 0, closed off by the slack
                    bld.add([(i, h + 1, axis, -s), (i, h, axis, s)], -opts.eps_slack, HEADING, (i, h, "xy"[axis]))
            for axis in (0, 1):
                bld.add([(i, h + 1, axis, 1.0), (i, h, axis, -1.0)], reach, SPEED, (i, h, "xy"[axis]))
                bld.add([(i, h + 1, axis, -1.0), (i, h, axis, 1.0)], reach, SPEED, (i, h, "xy"[axis]))

    for h in range(H + 1):
        dist = rounds[h].distances
        for a, i in enumerate(members):
            for j in members[a + 1:]:
                d = dist.get(i, j)
                if d is None:
                    continue
                for axis in (0, 1):
                    src = (i, j, h, "xy"[axis])
                    bld.add([(i, h, axis, 1.0), (j, h, axis, -1.0)], d, DISTANCE, src)
                    bld.add([(i, h, axis, -1.0), (j, h, axis, 1.0)], d, DISTANCE, src)

    A = np.array(bld.rows).reshape(len(bld.rows), layout.n_vars)
    b = np.array(bld.b, dtype=float)
    A.setflags(write=False)
    b.setflags(write=False)
    return ConstraintSet(layout, A, b, tuple(bld.kinds), tuple(bld.sources), opts.tau, tuple(bld.conflicts))
