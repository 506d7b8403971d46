"""Unknown layout and solver options for the planar multi-step problem."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from ..geometry import Configuration, kmh_to_ms
from ..sim import ObservationRound

MODES = ("continuous", "discrete", "hybrid")


@dataclass(frozen=True)
class SolveOptions:
    eps_dir: float = 0.05  # deadband on |cos|, |sin| of a heading
    tau: float = 1e-6  # constraint violation that is still free, m
    eps_slack: float = 1e-6  # margin turning strict inequalities into closed ones, m
    grid: float = 0.1  # m
    radius: float = 50.0  # m
    v_max: float = kmh_to_ms(4.0)
    multistart: int = 32
    max_iter: int = 60
    rho: float = 0.5  # uniqueness radius, m
    mode: str = "continuous"
    multi_objective: bool = False
    w_d: float = 1.0
    w_a: float = 1.0
    seed: int = 0
    penalty: float = 1e4
    sigma_distance: float = 0.0  # expected noise, sets the acceptance threshold
    sigma_heading: float = 0.0
    accept_threshold: float | None = None
    node_budget: int = 2_000_000
    tie_eps: float = 1e-9
    hybrid_grid: float = 1.0
    hybrid_keep: int = 16
    near_threshold: float = 5.0  # m; pairs closer than this qualify for the near-pair anchor
    explore: bool = True  # walk along solution families that leave the objective flat
    walk_steps: int = 200  # cap per direction on family walking steps

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        positive = ("grid", "radius", "v_max", "multistart", "max_iter", "rho", "penalty", "node_budget",
                    "hybrid_grid", "hybrid_keep", "near_threshold", "walk_steps")
        bad = [name for name in positive if not getattr(self, name) > 0]
        nonneg = ("eps_dir", "tau", "eps_slack", "w_d", "w_a", "sigma_distance", "sigma_heading", "tie_eps")
        bad += [name for name in nonneg if getattr(self, name) < 0]
        if bad:
            raise ValueError(f"invalid option values: {', '.join(bad)}")

    def replace(self, **changes) -> "SolveOptions":
        return replace(self, **changes)


@dataclass(frozen=True)
class VariableLayout:
    """Flattening of planar positions ``(h, robot, axis)`` into a vector.

    Order is time-major, then ``members`` order, then x before y. Pinned
    coordinates (by default the first member at step 0, held at the origin)
    are constants and get no index.
    """

    members: tuple[int, ...]
    n_steps: int
    pins: Mapping[tuple[int, int], tuple[float, float]] = field(default=None)

    def __post_init__(self):
        members = tuple(int(m) for m in self.members)
        if len(set(members)) != len(members) or len(members) < 2:
            raise ValueError("members must be at least two distinct robot ids")
        pins = {(members[0], 0): (0.0, 0.0)} if self.pins is None else dict(self.pins)
        for (r, h) in pins:
            if r not in members or not 0 <= h <= self.n_steps:
                raise ValueError(f"pin {(r, h)} outside the layout")
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "pins", pins)
        shape = (self.n_steps + 1, len(members), 2)
        index = np.full(shape, -1, dtype=int)
        fixed = np.zeros(shape)
        k = 0
        for h in range(self.n_steps + 1):
            for m, r in enumerate(members):
                if (r, h) in pins:
                    fixed[h, m] = pins[(r, h)]
                    continue
                index[h, m] = (k, k + 1)
                k += 2
        index.setflags(write=False)
        fixed.setflags(write=False)
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "fixed", fixed)
        object.__setattr__(self, "n_vars", k)

    @property
    def origin(self) -> int:
        return self.members[0]

    @property
    def n_members(self) -> int:
        return len(self.members)

    def slot(self, robot: int) -> int:
        return self.members.index(robot)

    def var(self, robot: int, h: int, axis: int) -> int | None:
        k = int(self.index[h, self.slot(robot), axis])
        return None if k < 0 else k

    def positions(self, v: np.ndarray) -> np.ndarray:
        """(H+1, M, 2) positions with pins filled in."""
        out = self.fixed.copy()
        mask = self.index >= 0
        out[mask] = np.asarray(v, dtype=float)[self.index[mask]]
        return out

    def flatten(self, positions: np.ndarray) -> np.ndarray:
        positions = np.asarray(positions, dtype=float)
        v = np.empty(self.n_vars)
        mask = self.index >= 0
        v[self.index[mask]] = positions[mask]
        return v

    def describe(self, k: int) -> tuple[int, int, str]:
        """``(robot, step, axis)`` of variable ``k``."""
        h, m, a = (int(c[0]) for c in np.nonzero(self.index == k))
        return self.members[m], h, "xy"[a]

    def configurations(self, v: np.ndarray, timestamps: Sequence[float] | None = None) -> list[Configuration]:
        pos = self.positions(v)
        ts = timestamps if timestamps is not None else range(self.n_steps + 1)
        return [Configuration(self.members, pos[h], self.origin, float(t)) for h, t in zip(range(len(pos)), ts)]


def order_members(round0: ObservationRound, members: Sequence[int]) -> list[int]:
    """First member stays first; the rest sorted by measured range to it.

    Robots without a measured range go last, in their given order.
    """
    members = list(members)
    origin = members[0]
    d = round0.distances.values[origin]
    rest = sorted(members[1:], key=lambda r: (math.isnan(d[r]), 0.0 if math.isnan(d[r]) else d[r]))
    return [origin] + rest
