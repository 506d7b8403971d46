import itertools
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from swarmloc.errors import MissingDistance, NoConsistentPair, NotRealizable
from swarmloc.geometry import DistanceMatrix, pairwise_distances
from swarmloc.sim import ScenarioConfig, generate_trajectories, synthesize_observations
from swarmloc.trilat import (
    AmbiguityReport,
    GaugeConvention,
    MotionHypothesis,
    ResolvedConstellation,
    disambiguate_by_motion,
    enumerate_candidates,
    select_members,
    solve_constellation,
)

G = GaugeConvention(0, 1, 2, 3)
TETRA = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])


def gauge_frame(points):
    """Oracle: express points in the gauge frame by Gram-Schmidt on the members."""
    p = points - points[0]
    e1 = p[1] / np.linalg.norm(p[1])
    v = p[2] - (p[2] @ e1) * e1
    e2 = v / np.linalg.norm(v)
    e3 = np.cross(e1, e2)
    return p @ np.array([e1, e2, e3]).T


def motion_oracle(points0, moves, d1, tol):
    """Oracle: a t0 candidate survives iff moving it reproduces the t1 ranges.

    Ranges are rotation invariant, so this needs neither the t1 candidates nor
    any alignment.
    """
    return [np.abs(pairwise_distances(c + moves) - d1).max() <= tol for c in points0]


def test_regular_tetrahedron_candidates():
    cs = enumerate_candidates(DistanceMatrix.from_coords(TETRA), G)
    assert len(cs) == 8
    first = next(c for c in cs if c.signs == (1, 1, 1))
    assert np.allclose(first.config.coords, TETRA, atol=1e-12)
    for c in cs:
        assert np.abs(pairwise_distances(c.config.coords) - pairwise_distances(TETRA)).max() <= 1e-12


def test_planar_instance_has_four_candidates():
    pts = np.array([[0, 0, 0], [4, 0, 0], [1, 3, 0], [3, 5, 0.0]])
    cs = enumerate_candidates(DistanceMatrix.from_coords(pts), G)
    assert len(cs) == 4
    assert all(c.config.coords[3, 2] == 0.0 for c in cs)


def test_collinear_plane_robot_collapses():
    pts = np.array([[0, 0, 0], [4, 0, 0], [7, 0, 0], [3, 5, 1.0]])
    cs = enumerate_candidates(DistanceMatrix.from_coords(pts), G)
    assert len(cs) < 8
    for c in cs:
        assert np.abs(pairwise_distances(c.config.coords) - pairwise_distances(pts)).max() <= 1e-9


def test_triangle_violation_not_realizable():
    d = pairwise_distances(TETRA)
    d[1, 2] = d[2, 1] = d[0, 1] + d[0, 2] + 0.5
    with pytest.raises(NotRealizable):
        enumerate_candidates(DistanceMatrix(d), G)


def test_missing_distance():
    m = DistanceMatrix.from_coords(TETRA).without([(2, 3)])
    with pytest.raises(MissingDistance):
        enumerate_candidates(m, G)


def test_gauge_needs_distinct_robots():
    with pytest.raises(ValueError):
        GaugeConvention(0, 1, 1, 3)


points4 = st.lists(st.floats(-20, 20, allow_nan=False), min_size=12, max_size=12).map(
    lambda v: np.array(v).reshape(4, 3)
)


@settings(max_examples=100, deadline=None)
@given(points4)
def test_candidate_soundness_completeness_closure(pts):
    d = pairwise_distances(pts)
    assume(d[np.triu_indices(4, 1)].min() > 0.5)
    local = gauge_frame(pts)
    assume(abs(local[2, 1]) > 0.05 and abs(local[3, 2]) > 0.05)
    cs = enumerate_candidates(DistanceMatrix(d), G)
    coords = cs.coords()
    assert len(cs) == 8
    for c in coords:
        assert np.abs(pairwise_distances(c) - d).max() <= 1e-6
    assert min(np.abs(c - local).max() for c in coords) <= 1e-9 * max(1.0, d.max())
    for c in coords:
        for flip in np.diag([-1.0, 1, 1]), np.diag([1.0, -1, 1]), np.diag([1.0, 1, -1]):
            assert min(np.abs(c @ flip - o).max() for o in coords) <= 1e-9


def _disambiguate_tetra(moves, frame="gauge", tol=1e-6):
    p1 = TETRA + moves
    s0 = enumerate_candidates(DistanceMatrix.from_coords(TETRA), G)
    s1 = enumerate_candidates(DistanceMatrix.from_coords(p1), G, timestamp=1.0)
    res = disambiguate_by_motion(s0, s1, MotionHypothesis(dict(enumerate(moves)), 1.0, frame), tol)
    return s0, p1, res


def test_tetrahedron_motion_with_vertical_component_is_unique():
    moves = np.array([[0, 0, 0], [0, 0.5, 0], [0.5, 0, 0], [0, 0, 0.5]])
    for frame in ("gauge", "world"):
        s0, p1, res = _disambiguate_tetra(moves, frame)
        assert isinstance(res, ResolvedConstellation)
        assert np.allclose(res.config0.coords, TETRA, atol=1e-9)
        assert np.allclose(res.config1.coords, p1, atol=1e-9)
    ok = motion_oracle(s0.coords(), moves, pairwise_distances(TETRA + moves), 1e-6)
    assert [c.signs for c, k in zip(s0, ok) if k] == [(1, 1, 1)]


def test_tetrahedron_planar_motion_leaves_vertical_mirror():
    # every displacement lies in the xy-plane, so the z-mirror moves identically
    moves = np.array([[0, 0, 0], [0, 0.5, 0], [0.5, 0, 0], [0, 0, 0]])
    s0, _p1, res = _disambiguate_tetra(moves)
    ok = motion_oracle(s0.coords(), moves, pairwise_distances(TETRA + moves), 1e-6)
    assert sorted(c.signs for c, k in zip(s0, ok) if k) == [(1, 1, -1), (1, 1, 1)]
    assert isinstance(res, AmbiguityReport) and res.n_distinct == 2
    assert sorted(tuple(np.round(r[0].coords[3], 9)) for r in res.resolutions) == [(0, 0, -1), (0, 0, 1)]


def test_uniform_translation_pairs_every_candidate():
    moves = np.zeros((4, 3))
    _s0, _p1, res = _disambiguate_tetra(moves)
    assert isinstance(res, AmbiguityReport)
    assert res.n_distinct == 8 and len(res.pairs) >= 8


def test_perturbed_second_round_has_no_pair():
    tol = 1e-6
    moves = np.array([[0, 0, 0], [0, 0.5, 0], [0.5, 0, 0], [0, 0, 0.5]])
    d1 = pairwise_distances(TETRA + moves)
    d1[0, 1] = d1[1, 0] = d1[0, 1] + 10 * tol
    s0 = enumerate_candidates(DistanceMatrix.from_coords(TETRA), G)
    s1 = enumerate_candidates(DistanceMatrix(d1), G, tol=tol)
    with pytest.raises(NoConsistentPair):
        disambiguate_by_motion(s0, s1, MotionHypothesis(dict(enumerate(moves)), 1.0, "gauge"), tol)


def test_motion_hypothesis_from_velocities_is_origin_relative():
    m = MotionHypothesis.from_velocities({0: [1, 0, 0], 1: [1, 1, 0]}, origin=0, dt=2.0)
    assert np.allclose(m.displacements[0], 0) and np.allclose(m.displacements[1], (0, 2, 0))
    with pytest.raises(ValueError):
        MotionHypothesis({0: np.array([np.nan, 0, 0])}, 1.0)


def _scenario(seed, **kw):
    cfg = ScenarioConfig(n_robots=kw.pop("n_robots", 4), seed=seed, n_steps=1, **kw)
    traj = generate_trajectories(cfg)
    return traj, synthesize_observations(traj, cfg)


@pytest.mark.parametrize("seed", range(25))
def test_simulated_constellation_matches_truth(seed):
    traj, rounds = _scenario(seed, n_robots=8)
    members = select_members(rounds[0], 0)
    res = solve_constellation(rounds[0], rounds[1], members, depth_tol=1e-5)
    assert isinstance(res, ResolvedConstellation)
    truth0 = traj.positions[0][members] - traj.positions[0][0]
    truth1 = traj.positions[1][members] - traj.positions[1][0]
    assert np.abs(res.config0.coords - truth0).max() <= 1e-6
    assert np.abs(res.config1.coords - truth1).max() <= 1e-6


def test_horizontal_motion_without_depths_is_mirror_ambiguous():
    _traj, rounds = _scenario(0)
    res = solve_constellation(rounds[0], rounds[1], [0, 1, 2, 3])
    assert isinstance(res, AmbiguityReport) and res.n_distinct == 2


def test_depth_drift_resolves_without_depths():
    hits = 0
    for seed in range(10):
        traj, rounds = _scenario(seed, depth_drift=0.3)
        res = solve_constellation(rounds[0], rounds[1], [0, 1, 2, 3])
        if isinstance(res, ResolvedConstellation):
            hits += 1
            assert np.abs(res.config0.coords - (traj.positions[0] - traj.positions[0][0])).max() <= 1e-6
    assert hits >= 8


@pytest.mark.parametrize("seed", range(10))
def test_uniform_translation_scenario_is_ambiguous(seed):
    _traj, rounds = _scenario(seed, uniform_translation=True)
    res = solve_constellation(rounds[0], rounds[1], [0, 1, 2, 3], depth_tol=1e-5)
    assert isinstance(res, AmbiguityReport) and len(res.pairs) >= 2


def test_noisy_ranges_defeat_exact_method_often():
    failures = 0
    tol = 3 * 0.1 * math.sqrt(2)
    for seed in range(20):
        _traj, rounds = _scenario(seed, sigma_distance=0.1)
        try:
            solve_constellation(rounds[0], rounds[1], [0, 1, 2, 3], tol=tol, depth_tol=tol)
        except (NotRealizable, NoConsistentPair):
            failures += 1
    assert failures >= 4


def test_select_members_nearest():
    d = pairwise_distances(np.array([[0, 0, 0], [10, 0, 0], [1, 0, 0], [0, 2, 0], [0, 0, 3], [5, 5, 5.0]]))
    from swarmloc.sim import ObservationRound

    r = ObservationRound(0.0, np.zeros(6), np.zeros(6), DistanceMatrix(d))
    assert select_members(r, 0) == [0, 2, 3, 4]
    with pytest.raises(MissingDistance):
        select_members(r, 0, k=6)


def test_depth_filter_discards_all_on_contradictory_depths():
    _traj, rounds = _scenario(0)
    bad = rounds[0].__class__(
        rounds[0].timestamp, rounds[0].headings, rounds[0].depths + np.array([0, 3.0, -3.0, 1.0]),
        rounds[0].distances, rounds[0].velocities, rounds[0].moving,
    )
    with pytest.raises(NoConsistentPair):
        solve_constellation(bad, rounds[1], [0, 1, 2, 3], depth_tol=1e-5)


def test_all_pairs_listed_for_resolution():
    _s0, _p1, res = _disambiguate_tetra(np.array([[0, 0, 0], [0, 0.5, 0], [0.5, 0, 0], [0, 0, 0.5]]))
    # the four same-handedness t1 candidates are rotations of one another
    assert {p.signs1 for p in res.pairs} == {s for s in itertools.product((1, -1), repeat=3) if np.prod(s) > 0}
