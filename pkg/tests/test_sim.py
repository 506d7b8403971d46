import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swarmloc.errors import GenerationFailure, InsufficientBracketing
from swarmloc.geometry import DistanceMatrix, pairwise_distances
from swarmloc.sim import (
    STATIONARY_THRESHOLD,
    Emission,
    ObservationRound,
    ScenarioConfig,
    generate_trajectories,
    interpolate_to_round,
    load_config,
    read_observation_log,
    save_config,
    synthesize_observations,
    trajectories_from_dict,
    trajectories_to_dict,
    write_observation_log,
)


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(n_robots=2)
    with pytest.raises(ValueError):
        ScenarioConfig(d_min=60.0)
    with pytest.raises(ValueError):
        ScenarioConfig(sigma_distance=-1.0)
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict({"n_robots": 4, "bogus": 1})


def test_config_file_roundtrip(tmp_path):
    cfg = ScenarioConfig(n_robots=5, seed=11, sigma_distance=0.1)
    save_config(cfg, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == cfg


def test_trajectories_deterministic():
    a = generate_trajectories(ScenarioConfig(seed=7))
    b = generate_trajectories(ScenarioConfig(seed=7))
    for x, y in zip(trajectories_to_dict(a).values(), trajectories_to_dict(b).values()):
        assert x == y
    c = generate_trajectories(ScenarioConfig(seed=8))
    assert not np.array_equal(a.positions, c.positions)


def test_speed_bound_default():
    cfg = ScenarioConfig(v_max=1.1111, dt=1.0, n_steps=20)
    traj = generate_trajectories(cfg)
    disp = np.linalg.norm(np.diff(traj.positions, axis=0), axis=2)
    assert disp.max() <= 1.1111 + 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_spacing_and_arena(seed):
    cfg = ScenarioConfig(n_robots=20, d_min=3, d_max=50, n_steps=10, seed=seed)
    traj = generate_trajectories(cfg)
    for pos in traj.positions:
        d = pairwise_distances(pos)[np.triu_indices(20, 1)]
        ok = d.min() >= 3 - 1e-9 and d.max() <= 50 + 1e-9
        assert ok or traj.violation
        assert np.hypot(pos[:, 0], pos[:, 1]).max() <= cfg.arena_radius


def test_heading_follows_displacement():
    traj = generate_trajectories(ScenarioConfig(n_robots=6, n_steps=10, seed=3))
    disp = np.diff(traj.positions[:, :, :2], axis=0)
    for h in range(traj.n_steps):
        for i in range(traj.n_robots):
            if np.linalg.norm(disp[h, i]) >= STATIONARY_THRESHOLD:
                assert math.atan2(disp[h, i, 1], disp[h, i, 0]) == pytest.approx(traj.headings[h, i], abs=1e-9)


def test_depth_constant_without_drift():
    traj = generate_trajectories(ScenarioConfig(n_robots=5, seed=1))
    assert np.all(traj.positions[:, :, 2] == traj.positions[0, :, 2])


def test_uniform_translation_fixture():
    traj = generate_trajectories(ScenarioConfig(n_robots=6, seed=2, uniform_translation=True))
    assert np.allclose(traj.velocities, traj.velocities[:, :1, :])


def test_overconstrained_placement_fails():
    with pytest.raises(GenerationFailure):
        generate_trajectories(ScenarioConfig(n_robots=30, spawn_radius=4.0, d_min=3.0))


def test_zero_noise_identity():
    cfg = ScenarioConfig(n_robots=8, seed=4)
    traj = generate_trajectories(cfg)
    for h, r in enumerate(synthesize_observations(traj, cfg)):
        assert np.array_equal(r.distances.values, pairwise_distances(traj.positions[h]))
        assert np.array_equal(r.depths, traj.positions[h, :, 2])
        assert np.array_equal(r.velocities, traj.velocities[h])


def test_noise_mean_large_sample():
    cfg = ScenarioConfig(n_robots=3, n_steps=9999, sigma_distance=0.1, seed=5)
    traj = generate_trajectories(cfg)
    rounds = synthesize_observations(traj, cfg)
    err = [r.distances.values[0, 1] - np.linalg.norm(traj.positions[h, 0] - traj.positions[h, 1])
           for h, r in enumerate(rounds)]
    assert len(err) == 10_000
    assert abs(np.mean(err)) <= 0.01
    assert np.std(err) == pytest.approx(0.1, rel=0.05)


def test_noise_does_not_change_motion():
    a = generate_trajectories(ScenarioConfig(seed=9))
    b = generate_trajectories(ScenarioConfig(seed=9, sigma_distance=0.5, sigma_heading=0.2))
    assert np.array_equal(a.positions, b.positions)


def test_heading_noise_is_wrapped():
    r = ObservationRound(0.0, [3 * math.pi / 4 + math.pi / 2], [0.0], DistanceMatrix([[0.0]]))
    assert r.headings[0] == pytest.approx(-3 * math.pi / 4)
    assert -math.pi <= r.headings[0] < math.pi


def _emission(robot, t, dist):
    return Emission(robot, t, 0.0, 5.0, np.zeros(3), True, dist)


def test_interpolation_midpoint():
    em = [_emission(0, 0.0, {1: 10.0}), _emission(1, 0.0, {0: 10.0}),
          _emission(0, 2.0, {1: 12.0}), _emission(1, 2.0, {0: 12.0})]
    r = interpolate_to_round(em, 1.0)
    assert r.distances.get(0, 1) == pytest.approx(11.0)


def test_interpolation_needs_bracketing():
    em = [_emission(0, 0.0, {1: 10.0}), _emission(1, 0.0, {0: 10.0}), _emission(1, 2.0, {0: 12.0})]
    with pytest.raises(InsufficientBracketing):
        interpolate_to_round(em, 1.0)


def test_synchronized_round_passes_through():
    cfg = ScenarioConfig(n_robots=4, seed=1)
    r = synthesize_observations(generate_trajectories(cfg), cfg)[2]
    assert interpolate_to_round(r, r.timestamp) is r
    with pytest.raises(InsufficientBracketing):
        interpolate_to_round(r, r.timestamp + 0.5)


@pytest.mark.parametrize("seed", range(5))
def test_async_interpolation_error_bound_slow_motion(seed):
    # interpolation error of a range is at most 2 * (relative speed) * jitter,
    # and relative speed is at most 2 * v so v <= v_max / 4 gives v_max * jitter
    v_max, dt = 1.1111, 1.0
    base = ScenarioConfig(n_robots=6, v_max=v_max / 4, dt=dt, seed=seed, jitter_max=0.1 * dt)
    traj = generate_trajectories(base)
    sync = synthesize_observations(traj, base)
    asyn = synthesize_observations(traj, base.replace(emission_mode="asynchronous"))
    for a, s in zip(asyn, sync):
        assert np.nanmax(np.abs(a.distances.values - s.distances.values)) <= v_max * 0.1 * dt + 1e-12


def test_observation_log_roundtrip(tmp_path):
    cfg = ScenarioConfig(n_robots=5, seed=3, sigma_distance=0.1, sigma_heading=0.05)
    traj = generate_trajectories(cfg)
    rounds = synthesize_observations(traj, cfg)
    rounds[1] = rounds[1].with_distances(rounds[1].distances.without([(0, 3)]))
    write_observation_log(tmp_path / "obs.jsonl", rounds, cfg)
    back, cfg2 = read_observation_log(tmp_path / "obs.jsonl")
    assert cfg2 == cfg and back == rounds
    assert trajectories_from_dict(trajectories_to_dict(traj)).positions.tolist() == traj.positions.tolist()


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32), n=st.integers(3, 8), persistence=st.floats(0.0, 1.0))
def test_generation_properties(seed, n, persistence):
    cfg = ScenarioConfig(n_robots=n, seed=seed, heading_persistence=persistence, n_steps=5)
    traj = generate_trajectories(cfg)
    step = np.linalg.norm(np.diff(traj.positions, axis=0), axis=2)
    assert step.max() <= cfg.v_max * cfg.dt + 1e-12
    assert np.all(traj.headings >= -math.pi) and np.all(traj.headings < math.pi)
    assert traj.moving.shape == (cfg.n_steps + 1, n)
