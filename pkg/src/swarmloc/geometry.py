"""Geometric value types and elementary distance/angle math.

Conventions used across the package:

* SI units everywhere (meters, seconds, radians). Speeds given in km/h are
  converted with :func:`kmh_to_ms` at the boundary.
* ``x`` points north. Headings are measured counterclockwise from ``+x``
  (towards ``+y``) and live in the half-open interval ``[-pi, pi)``.
* ``z`` is the depth axis (positive down). Planar solvers work on ``(x, y)``
  and carry depth separately.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


class Position3(NamedTuple):
    x: float
    y: float
    z: float


class Position2(NamedTuple):
    x: float
    y: float


def kmh_to_ms(speed_kmh: float) -> float:
    return speed_kmh / 3.6


def euclidean_distance(p: Sequence[float], q: Sequence[float]) -> float:
    """Euclidean norm of ``p - q`` for points of equal dimension."""
    if len(p) != len(q):
        raise ValueError(f"dimension mismatch: {len(p)} vs {len(q)}")
    return math.sqrt(sum((a - b) * (a - b) for a, b in zip(p, q)))


def wrap_angle(theta: float) -> float:
    """Map ``theta`` into ``[-pi, pi)``; ``pi`` itself maps to ``-pi``."""
    r = math.fmod(theta + math.pi, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    r -= math.pi
    # fmod of values a hair below a multiple of 2*pi can round up to pi
    if r >= math.pi:
        r -= TWO_PI
    return r


def wrap_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorized :func:`wrap_angle`."""
    r = np.mod(np.asarray(theta, dtype=float) + np.pi, TWO_PI) - np.pi
    return np.where(r >= np.pi, r - TWO_PI, r)


def angle_difference(a, b):
    """Wrapped difference ``a - b`` (scalar or array)."""
    if np.ndim(a) == 0 and np.ndim(b) == 0:
        return wrap_angle(float(a) - float(b))
    return wrap_angles(np.asarray(a) - np.asarray(b))


def project_to_plane(p: Sequence[float]) -> Position2:
    return Position2(float(p[0]), float(p[1]))


def attach_depth(p: Sequence[float], depth: float) -> Position3:
    """Inverse section of :func:`project_to_plane` given the observed depth."""
    return Position3(float(p[0]), float(p[1]), float(depth))


def pairwise_distances(coords: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


class DistanceMatrix:
    """Symmetric matrix of measured ranges; ``nan`` marks a missing entry.

    Entries are validated on construction: symmetric, zero diagonal, and every
    present off-diagonal entry positive and finite.
    """

    __slots__ = ("_values",)

    def __init__(self, values: np.ndarray | Sequence[Sequence[float]]):
        v = np.array(values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("distance matrix must be square")
        n = v.shape[0]
        if np.any(np.diag(v) != 0.0):
            raise ValueError("distance matrix diagonal must be zero")
        present = ~np.isnan(v)
        if not np.array_equal(present, present.T) or not np.allclose(
            np.nan_to_num(v), np.nan_to_num(v.T), rtol=0.0, atol=0.0
        ):
            raise ValueError("distance matrix must be symmetric")
        off = present & ~np.eye(n, dtype=bool)
        if np.any(~np.isfinite(v[off])) or np.any(v[off] <= 0.0):
            raise ValueError("present distances must be positive and finite")
        v.setflags(write=False)
        self._values = v

    @classmethod
    def from_coords(cls, coords: np.ndarray) -> "DistanceMatrix":
        return cls(pairwise_distances(coords))

    @property
    def n(self) -> int:
        return self._values.shape[0]

    @property
    def values(self) -> np.ndarray:
        return self._values

    def get(self, i: int, j: int) -> float | None:
        d = self._values[i, j]
        return None if math.isnan(d) else float(d)

    def has(self, i: int, j: int) -> bool:
        return not math.isnan(self._values[i, j])

    def submatrix(self, ids: Sequence[int]) -> "DistanceMatrix":
        idx = np.asarray(ids, dtype=int)
        return DistanceMatrix(self._values[np.ix_(idx, idx)])

    def without(self, pairs: Iterable[tuple[int, int]]) -> "DistanceMatrix":
        """Copy with the given pairs marked missing."""
        v = self._values.copy()
        for i, j in pairs:
            v[i, j] = v[j, i] = np.nan
        return DistanceMatrix(v)

    def triangle_violations(self, tol: float = 0.0) -> list[tuple[int, int, int]]:
        """Triples ``(i, j, k)`` with ``d_ik > d_ij + d_jk + tol``."""
        v = self._values
        out = []
        n = self.n
        for i in range(n):
            for k in range(i + 1, n):
                if math.isnan(v[i, k]):
                    continue
                for j in range(n):
                    if j in (i, k) or math.isnan(v[i, j]) or math.isnan(v[j, k]):
                        continue
                    if v[i, k] > v[i, j] + v[j, k] + tol:
                        out.append((i, j, k))
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, DistanceMatrix):
            return NotImplemented
        return self._values.shape == other._values.shape and np.array_equal(
            self._values, other._values, equal_nan=True
        )

    def __repr__(self) -> str:
        return f"DistanceMatrix(n={self.n})"


@dataclass(frozen=True)
class Configuration:
    """Positions of a set of robots in the frame of an origin robot.

    ``coords`` has one row per id in ``ids``; two columns in planar mode, three
    otherwise.
    """

    ids: tuple[int, ...]
    coords: np.ndarray
    origin: int
    timestamp: float = 0.0
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = tuple(int(i) for i in self.ids)
        coords = np.array(self.coords, dtype=float)
        if coords.ndim != 2 or coords.shape[0] != len(ids) or coords.shape[1] not in (2, 3):
            raise ValueError(f"coords shape {coords.shape} does not match {len(ids)} ids")
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate robot ids")
        if not np.all(np.isfinite(coords)):
            raise ValueError("non-finite coordinates")
        coords.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "_index", {r: k for k, r in enumerate(ids)})

    @classmethod
    def from_mapping(
        cls, positions: Mapping[int, Sequence[float]], origin: int, timestamp: float = 0.0
    ) -> "Configuration":
        ids = sorted(positions)
        return cls(tuple(ids), np.array([positions[i] for i in ids], dtype=float), origin, timestamp)

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def pos(self, robot: int) -> np.ndarray:
        return self.coords[self._index[robot]]

    def __contains__(self, robot: int) -> bool:
        return robot in self._index

    def as_dict(self) -> dict[int, tuple[float, ...]]:
        return {r: tuple(float(c) for c in self.coords[k]) for k, r in enumerate(self.ids)}

    def subset(self, ids: Sequence[int]) -> "Configuration":
        return Configuration(tuple(ids), np.array([self.pos(i) for i in ids]), self.origin, self.timestamp)

    def translated(self, offset: Sequence[float]) -> "Configuration":
        return Configuration(self.ids, self.coords + np.asarray(offset, dtype=float), self.origin, self.timestamp)

    def recentered(self) -> "Configuration":
        """Same shape, translated so the origin robot sits at zero."""
        return self.translated(-self.pos(self.origin))

    def planar(self) -> "Configuration":
        return Configuration(self.ids, self.coords[:, :2], self.origin, self.timestamp)
