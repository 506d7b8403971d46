"""Residual objective: range mismatches plus heading mismatches.

The range residual compares the modelled 3D range (planar separation plus the
measured depth difference) with the measured range. The heading residual is
the wrapped difference between the direction of a step's displacement and
the measured heading; steps flagged stationary, or whose displacement is
below the stationarity threshold, contribute nothing.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..geometry import wrap_angles
from ..sim import STATIONARY_THRESHOLD, ObservationRound
from .layout import VariableLayout


@dataclass(frozen=True)
class ObjectiveSpec:
    layout: VariableLayout
    # range terms: step, member slots i and j, measured range, depth difference z_i - z_j
    pair_h: np.ndarray
    pair_i: np.ndarray
    pair_j: np.ndarray
    pair_d: np.ndarray
    pair_dz: np.ndarray
    # heading terms: step, member slot, measured heading
    head_h: np.ndarray
    head_i: np.ndarray
    head_alpha: np.ndarray
    w_d: float = 1.0
    w_a: float = 1.0
    threshold: float = STATIONARY_THRESHOLD

    def __post_init__(self):
        if self.w_d < 0 or self.w_a < 0:
            raise ValueError("weights must be non-negative")

    @property
    def n_distance(self) -> int:
        return len(self.pair_d)

    @property
    def n_heading(self) -> int:
        return len(self.head_alpha)


def build_objective(
    rounds: Sequence[ObservationRound], layout: VariableLayout, w_d: float = 1.0, w_a: float = 1.0
) -> ObjectiveSpec:
    H = layout.n_steps
    members = layout.members
    ph, pi, pj, pd, pz = [], [], [], [], []
    for h in range(H + 1):
        r = rounds[h]
        for a, i in enumerate(members):
            for b in range(a + 1, len(members)):
                d = r.distances.get(i, members[b])
                if d is None:
                    continue
                ph.append(h)
                pi.append(a)
                pj.append(b)
                pd.append(d)
                pz.append(r.depths[i] - r.depths[members[b]])
    hh, hi, ha = [], [], []
    for h in range(H):
        r = rounds[h]
        for a, i in enumerate(members):
            if r.moving[i]:
                hh.append(h)
                hi.append(a)
                ha.append(r.headings[i])
    ints = lambda x: np.array(x, dtype=int)  # noqa: E731
    flts = lambda x: np.array(x, dtype=float)  # noqa: E731
    return ObjectiveSpec(
        layout, ints(ph), ints(pi), ints(pj), flts(pd), flts(pz), ints(hh), ints(hi), flts(ha), w_d, w_a
    )


def distance_residuals(P: np.ndarray, spec: ObjectiveSpec) -> np.ndarray:
    diff = P[spec.pair_h, spec.pair_i] - P[spec.pair_h, spec.pair_j]
    return np.sqrt((diff * diff).sum(1) + spec.pair_dz**2) - spec.pair_d


def _displacements(P: np.ndarray, spec: ObjectiveSpec) -> np.ndarray:
    return P[spec.head_h + 1, spec.head_i] - P[spec.head_h, spec.head_i]


def heading_residuals(P: np.ndarray, spec: ObjectiveSpec) -> np.ndarray:
    """Wrapped heading errors; zero where the displacement is below the threshold."""
    disp = _displacements(P, spec)
    ang = np.arctan2(disp[:, 1], disp[:, 0])
    r = wrap_angles(ang - spec.head_alpha)
    return np.where(np.hypot(disp[:, 0], disp[:, 1]) < spec.threshold, 0.0, r)


def multi_objective(v: np.ndarray, spec: ObjectiveSpec) -> tuple[float, float]:
    """``(range term, heading term)``, each already weighted."""
    P = spec.layout.positions(v)
    rd = distance_residuals(P, spec)
    ra = heading_residuals(P, spec)
    return float(spec.w_d * (rd @ rd)), float(spec.w_a * (ra @ ra))


def objective(v: np.ndarray, spec: ObjectiveSpec) -> float:
    d, a = multi_objective(v, spec)
    return d + a


def smooth_residuals(v: np.ndarray, spec: ObjectiveSpec) -> tuple[np.ndarray, np.ndarray]:
    """Weighted residual vector and its Jacobian, for least-squares descent.

    The heading residual is scaled by ``min(1, |disp| / threshold)`` so it
    fades out continuously instead of switching off at the threshold.
    """
    layout = spec.layout
    P = layout.positions(v)
    n = layout.n_vars
    idx = layout.index
    sd, sa = np.sqrt(spec.w_d), np.sqrt(spec.w_a)

    diff = P[spec.pair_h, spec.pair_i] - P[spec.pair_h, spec.pair_j]
    rng = np.sqrt((diff * diff).sum(1) + spec.pair_dz**2)
    rd = sd * (rng - spec.pair_d)
    gd = sd * diff / np.maximum(rng, 1e-12)[:, None]
    Jd = np.zeros((len(rd), n))
    rows = np.arange(len(rd))
    for axis in (0, 1):
        ki = idx[spec.pair_h, spec.pair_i, axis]
        kj = idx[spec.pair_h, spec.pair_j, axis]
        m = ki >= 0
        np.add.at(Jd, (rows[m], ki[m]), gd[m, axis])
        m = kj >= 0
        np.add.at(Jd, (rows[m], kj[m]), -gd[m, axis])

    disp = _displacements(P, spec)
    norm2 = (disp * disp).sum(1)
    norm = np.sqrt(norm2)
    safe2 = np.maximum(norm2, 1e-24)
    safe = np.sqrt(safe2)
    err = wrap_angles(np.arctan2(disp[:, 1], disp[:, 0]) - spec.head_alpha)
    scale = np.minimum(1.0, norm / spec.threshold)
    ra = sa * err * scale
    # d(angle)/d(disp) and d(scale)/d(disp)
    dang = np.stack([-disp[:, 1], disp[:, 0]], 1) / safe2[:, None]
    dscale = np.where((norm < spec.threshold)[:, None], disp / (safe[:, None] * spec.threshold), 0.0)
    ga = sa * (scale[:, None] * dang + err[:, None] * dscale)
    Ja = np.zeros((len(ra), n))
    rows = np.arange(len(ra))
    for axis in (0, 1):
        k1 = idx[spec.head_h + 1, spec.head_i, axis]
        k0 = idx[spec.head_h, spec.head_i, axis]
        m = k1 >= 0
        np.add.at(Ja, (rows[m], k1[m]), ga[m, axis])
        m = k0 >= 0
        np.add.at(Ja, (rows[m], k0[m]), -ga[m, axis])
    return np.concatenate([rd, ra]), np.vstack([Jd, Ja])
