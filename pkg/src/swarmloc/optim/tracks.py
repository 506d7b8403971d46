"""Near-pair anchoring and recovery of speeds and headings from solutions."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..geometry import Configuration
from ..sim import STATIONARY_THRESHOLD, ObservationRound
from .continuous import near_pair_anchor
from .layout import SolveOptions


@dataclass(frozen=True)
class NearPairAnchor:
    """The closest member pinned on the +x axis at its horizontal range.

    This removes the rotational freedom of the first step at the price of a
    fixed error: the gap between the robot's true position and ``(range, 0)``.
    """

    origin: int
    robot: int
    distance: float

    @property
    def pins(self) -> dict:
        return {(self.origin, 0): (0.0, 0.0), (self.robot, 0): (self.distance, 0.0)}

    def introduced_error(self, true_offset: Sequence[float]) -> tuple[float, float]:
        """Per-coordinate error of the pin given the true offset from the origin."""
        return abs(true_offset[0] - self.distance), abs(true_offset[1])


def approx_near_pair(
    rounds: Sequence[ObservationRound], members: Sequence[int], opts: SolveOptions
) -> NearPairAnchor:
    """Anchor the member nearest the first one, if closer than ``opts.near_threshold``.

    Raises :class:`NoClosePair` otherwise.
    """
    j, d = near_pair_anchor(rounds, members, opts.near_threshold)
    return NearPairAnchor(members[0], j, d)


@dataclass(frozen=True)
class TrackRecovery:
    speeds: np.ndarray  # (H, M) m/s
    headings: np.ndarray  # (H, M) rad, nan where stationary
    stationary: np.ndarray  # (H, M) bool
    members: tuple[int, ...]


def recover_tracks_and_speeds(
    solution: Sequence[Configuration] | np.ndarray,
    timestamps: Sequence[float],
    threshold: float = STATIONARY_THRESHOLD,
) -> TrackRecovery:
    """Per-step speed and heading of every member from solved positions."""
    if isinstance(solution, np.ndarray):
        P = solution[..., :2]
        members = tuple(range(P.shape[1]))
    else:
        P = np.array([c.coords[:, :2] for c in solution])
        members = solution[0].ids
    if len(P) < 2:
        raise ValueError("need at least two steps to recover motion")
    t = np.asarray(timestamps, dtype=float)
    if len(t) != len(P):
        raise ValueError("one timestamp per step is required")
    dt = np.diff(t)
    disp = np.diff(P, axis=0)
    dist = np.linalg.norm(disp, axis=2)
    stationary = dist < threshold
    speeds = dist / dt[:, None]
    headings = np.where(stationary, np.nan, np.arctan2(disp[..., 1], disp[..., 0]))
    headings = np.where(headings >= math.pi, headings - 2 * math.pi, headings)
    return TrackRecovery(speeds, headings, stationary, tuple(members))
