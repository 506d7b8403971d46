import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swarmloc.errors import DegenerateAnchors, FrameMismatch, NotEnoughAnchors
from swarmloc.extend import AnchorSet, extend_swarm, fuse_constellations, multilaterate
from swarmloc.geometry import Configuration, DistanceMatrix
from swarmloc.sim import ObservationRound, ScenarioConfig, generate_trajectories, synthesize_observations

ANCHORS = [(0, (0.0, 0.0), math.sqrt(2)), (1, (4.0, 0.0), math.sqrt(10)), (2, (0.0, 4.0), math.sqrt(10))]


def round_for(points, depths=None):
    points = np.asarray(points, dtype=float)
    n = len(points)
    z = np.zeros(n) if depths is None else np.asarray(depths, dtype=float)
    xyz = np.column_stack([points[:, :2], z])
    return ObservationRound(0.0, np.zeros(n), z, DistanceMatrix.from_coords(xyz))


def test_three_anchor_fix():
    fix = multilaterate(AnchorSet.from_triples(ANCHORS))
    assert fix.position == pytest.approx([1.0, 1.0], abs=1e-9)
    assert fix.residual < 1e-9


def test_inflated_ranges_stay_close():
    triples = [(i, p, d + 0.1) for i, p, d in ANCHORS]
    fix = multilaterate(AnchorSet.from_triples(triples))
    assert np.linalg.norm(fix.position - [1.0, 1.0]) <= 0.2


def test_collinear_anchors_are_degenerate():
    triples = [(0, (0.0, 0.0), 1.0), (1, (1.0, 0.0), 1.0), (2, (2.0, 0.0), 1.5)]
    with pytest.raises(DegenerateAnchors):
        multilaterate(AnchorSet.from_triples(triples))


def test_too_few_anchors():
    with pytest.raises(NotEnoughAnchors):
        multilaterate(AnchorSet.from_triples(ANCHORS[:2]))
    with pytest.raises(NotEnoughAnchors):
        multilaterate(AnchorSet.from_triples([(i, p + (0.0,), d) for i, p, d in ANCHORS]), planar=False)


def test_spatial_fix_with_four_anchors():
    A = np.array([[0, 0, 0], [5, 0, 0], [0, 5, 0], [0, 0, 5]], dtype=float)
    target = np.array([1.0, 2.0, 3.0])
    fix = multilaterate(AnchorSet((0, 1, 2, 3), A, np.linalg.norm(A - target, axis=1)), planar=False)
    assert fix.position == pytest.approx(target, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-30, 30), st.floats(-30, 30))
def test_fix_is_translation_equivariant(seed, tx, ty):
    rng = np.random.default_rng(seed)
    A = rng.uniform(-10, 10, size=(4, 2))
    target = rng.uniform(-10, 10, size=2)
    d = np.linalg.norm(A - target, axis=1) + rng.normal(0, 0.05, 4)
    base = multilaterate(AnchorSet((0, 1, 2, 3), A, d))
    moved = multilaterate(AnchorSet((0, 1, 2, 3), A + [tx, ty], d))
    assert moved.position == pytest.approx(base.position + [tx, ty], abs=1e-6)


def test_extension_recovers_every_robot_exactly():
    rng = np.random.default_rng(3)
    pts = rng.uniform(-20, 20, size=(12, 2))
    depths = rng.uniform(0, 10, 12)
    rnd = round_for(pts, depths)
    const = Configuration((0, 1, 2), pts[:3] - pts[0], 0)
    ext = extend_swarm(const, rnd)
    assert ext.unresolved == ()
    for r in range(12):
        assert ext.configuration.pos(r) == pytest.approx(pts[r] - pts[0], abs=1e-8)


def test_extension_with_spatial_constellation_uses_depths():
    rng = np.random.default_rng(4)
    pts = rng.uniform(-20, 20, size=(6, 2))
    depths = rng.uniform(0, 10, 6)
    rnd = round_for(pts, depths)
    xyz = np.column_stack([pts[:3] - pts[0], depths[:3] - depths[0]])
    ext = extend_swarm(Configuration((0, 1, 2), xyz, 0), rnd)
    assert ext.configuration.pos(5) == pytest.approx([*(pts[5] - pts[0]), depths[5] - depths[0]], abs=1e-8)


def test_extension_is_idempotent():
    rng = np.random.default_rng(5)
    pts = rng.uniform(-20, 20, size=(8, 2))
    rnd = round_for(pts)
    once = extend_swarm(Configuration((0, 1, 2), pts[:3], 0), rnd)
    twice = extend_swarm(once.configuration, rnd)
    assert twice.fixes == {}
    assert np.array_equal(twice.configuration.coords, once.configuration.coords)


def test_robot_without_enough_ranges_is_unresolved():
    rng = np.random.default_rng(6)
    pts = rng.uniform(-20, 20, size=(5, 2))
    rnd = round_for(pts)
    cut = rnd.with_distances(rnd.distances.without([(4, 0), (4, 1), (4, 3)]))
    ext = extend_swarm(Configuration((0, 1, 2), pts[:3], 0), cut)
    assert ext.unresolved == (4,)
    assert 3 in ext.fixes and 4 not in ext.configuration


def test_collinear_start_waits_for_more_anchors():
    pts = np.array([[0, 0], [5, 0], [10, 0], [3, 7], [6, -4]], dtype=float)
    rnd = round_for(pts)
    ext = extend_swarm(Configuration((0, 1, 2), pts[:3], 0), rnd)
    # every candidate only sees the collinear trio, so nothing can be fixed
    assert ext.unresolved == (3, 4)


def test_simulated_swarm_extends_from_true_constellation():
    cfg = ScenarioConfig(n_robots=20, seed=2, n_steps=1)
    traj = generate_trajectories(cfg)
    rnd = synthesize_observations(traj, cfg)[0]
    rel = traj.positions[0, :, :2] - traj.positions[0, 0, :2]
    ext = extend_swarm(Configuration((0, 1, 2, 3), rel[:4], 0), rnd)
    assert ext.unresolved == ()
    assert max(np.linalg.norm(ext.configuration.pos(r) - rel[r]) for r in range(20)) < 1e-8


def test_fusion_translation_and_tolerance():
    a = Configuration((0, 1, 2), np.array([[0, 0], [4, 0], [0, 3]], dtype=float), 0)
    b = Configuration((1, 2, 3), np.array([[0, 0], [-4, 3], [2, 2]], dtype=float), 1)
    fused = fuse_constellations(a, b)
    assert fused.translation == pytest.approx([4.0, 0.0])
    assert fused.configuration.pos(3) == pytest.approx([6.0, 2.0])
    assert fused.max_discrepancy < 1e-12
    assert not fused.reflection_checked  # only two shared robots

    bumped = Configuration((1, 2, 3), b.coords + [[0.05, 0], [0, 0], [0, 0]], 1)
    assert fuse_constellations(a, bumped).max_discrepancy <= 0.05


def test_fusion_detects_mirrored_branch():
    pts = np.array([[0, 0], [4, 0], [1, 3], [5, 5]], dtype=float)
    a = Configuration((0, 1, 2, 3), pts, 0)
    mirrored = Configuration((0, 1, 2), pts[:3] * [1, -1], 0)
    with pytest.raises(FrameMismatch):
        fuse_constellations(a, mirrored)
    ok = fuse_constellations(a, Configuration((0, 1, 2), pts[:3] + 7.0, 0))
    assert ok.reflection_checked


def test_fusion_needs_shared_robot():
    a = Configuration((0, 1), np.zeros((2, 2)), 0)
    b = Configuration((2, 3), np.ones((2, 2)), 2)
    with pytest.raises(ValueError):
        fuse_constellations(a, b)
