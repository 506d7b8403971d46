"""Solver results and their grouping into distinct solutions."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..geometry import Configuration
from .layout import VariableLayout


@dataclass(frozen=True)
class Solution:
    positions: np.ndarray  # (H+1, M, 2)
    objective: float
    violation: float
    terms: tuple[float, float] = (0.0, 0.0)  # (range term, heading term)

    def configurations(self, layout: VariableLayout, timestamps: Sequence[float] | None = None) -> list[Configuration]:
        ts = timestamps if timestamps is not None else range(len(self.positions))
        return [Configuration(layout.members, p, layout.origin, float(t)) for p, t in zip(self.positions, ts)]


def rms_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Root-mean-square position difference between two solutions."""
    d = np.asarray(a) - np.asarray(b)
    return float(np.sqrt((d * d).sum(-1).mean()))


def sort_key(sol: Solution) -> tuple:
    return (sol.objective, tuple(np.round(sol.positions.ravel(), 9)))


@dataclass(frozen=True)
class SolutionSet:
    """Accepted solutions sorted by objective, grouped into clusters.

    Cluster representatives are the best solution of each cluster and are
    pairwise at least ``rho`` apart (RMS over all positions).
    """

    layout: VariableLayout
    solutions: tuple[Solution, ...]
    labels: tuple[int, ...]
    rho: float
    stats: dict = field(default_factory=dict, compare=False)

    @property
    def n_clusters(self) -> int:
        return (max(self.labels) + 1) if self.labels else 0

    @property
    def unique(self) -> bool:
        return self.n_clusters == 1

    @property
    def ambiguous(self) -> bool:
        return self.n_clusters > 1

    @property
    def representatives(self) -> tuple[Solution, ...]:
        seen, out = set(), []
        for sol, lab in zip(self.solutions, self.labels):
            if lab not in seen:
                seen.add(lab)
                out.append(sol)
        return tuple(out)

    @property
    def best(self) -> Solution:
        return self.solutions[0]

    def spread(self) -> float:
        """Largest RMS distance of any accepted solution from the best one."""
        return max((rms_distance(s.positions, self.best.positions) for s in self.solutions), default=0.0)


def cluster(layout: VariableLayout, solutions: Sequence[Solution], rho: float, stats: dict | None = None) -> SolutionSet:
    """Leader clustering in objective order; deterministic for a given input set."""
    ordered = sorted(solutions, key=sort_key)
    leaders: list[np.ndarray] = []
    labels = []
    for sol in ordered:
        for k, lead in enumerate(leaders):
            if rms_distance(sol.positions, lead) < rho:
                labels.append(k)
                break
        else:
            leaders.append(sol.positions)
            labels.append(len(leaders) - 1)
    return SolutionSet(layout, tuple(ordered), tuple(labels), rho, dict(stats or {}))
