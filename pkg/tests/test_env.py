import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentplan.env import (
    RASTER,
    CarState,
    EnvConfig,
    TrackEnv,
    UsageError,
    clip_action,
    generate_track,
    initial_state,
    locate,
    oracle_dynamics,
    render_observation,
    transition,
)

STRAIGHT = EnvConfig(curvature_scale=0.0)


def full_throttle_traversal(config=STRAIGHT, seed=0):
    env = TrackEnv.from_seed(seed, config)
    env.reset()
    total, steps, done = 0.0, 0, False
    while not done:
        _, r, done = env.step([0.0, 1.0, 0.0])
        total += r
        steps += 1
    return env, total, steps


def raster(obs):
    return obs.reshape(RASTER, RASTER)


class TestTrack:
    def test_deterministic(self):
        a, b = generate_track(42), generate_track(42)
        np.testing.assert_array_equal(a.centerline, b.centerline)

    def test_seeds_differ(self):
        assert not np.allclose(generate_track(1).centerline, generate_track(2).centerline)

    def test_zero_curvature_is_straight(self):
        spec = generate_track(7, STRAIGHT)
        np.testing.assert_allclose(spec.centerline[:, 1], 0.0)

    def test_default_tile_count_and_length(self):
        spec = generate_track(3)
        assert spec.n_tiles == 100
        seg = np.linalg.norm(np.diff(spec.centerline, axis=0), axis=1)
        np.testing.assert_allclose(seg, spec.tile_length)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6))
    def test_heading_deltas_bounded(self, seed):
        cfg = EnvConfig()
        spec = generate_track(seed, cfg)
        deltas = np.abs(np.diff(np.concatenate([[0.0], spec.headings])))
        assert deltas.max() <= cfg.max_curvature * cfg.tile_length + 1e-12
        assert np.abs(spec.headings).max() < 0.45 * np.pi + 1e-12

    def test_too_few_tiles(self):
        with pytest.raises(ValueError):
            EnvConfig(n_tiles=9)

    def test_turn_bias_prefers_left(self):
        cfg = EnvConfig(turn_bias=1.0)
        mean_heading = np.mean([generate_track(s, cfg).headings[-1] for s in range(20)])
        assert mean_heading > 0


class TestReset:
    def test_center_pixel_on_track(self):
        obs = TrackEnv.from_seed(0).reset()
        assert raster(obs)[8, 7] == 1.0 and raster(obs)[8, 8] == 1.0

    def test_speed_bar_empty_at_rest(self):
        obs = TrackEnv.from_seed(0).reset()
        np.testing.assert_array_equal(raster(obs)[-1], 0.0)

    def test_reset_twice_identical(self):
        env = TrackEnv.from_seed(5)
        a = env.reset()
        env.step([0.3, 1.0, 0.0])
        np.testing.assert_array_equal(a, env.reset())

    def test_initial_state(self):
        spec = generate_track(0)
        s = initial_state(spec)
        assert s.speed == 0.0 and s.tile == 0 and s.t == 0 and not s.visited.any()


class TestStep:
    def test_rest_state(self):
        spec = generate_track(0)
        s0 = initial_state(spec)
        s1, r, done = transition(spec, s0, [0.0, 0.0, 0.0])
        np.testing.assert_array_equal(s1.position, s0.position)
        assert r == pytest.approx(-0.1 + 10.0)  # tile 0 is credited on the first step
        s2, r, done = transition(spec, s1, [0.0, 0.0, 0.0])
        assert r == pytest.approx(-0.1) and not done

    def test_one_new_tile(self):
        spec = generate_track(0, STRAIGHT)
        s, _, _ = transition(spec, initial_state(spec), [0, 0, 0])
        rewards = []
        while s.tile == 0:
            s, r, _ = transition(spec, s, [0, 1, 0])
            rewards.append(r)
        assert rewards[-1] == pytest.approx(9.9)

    def test_full_traversal_reward(self):
        env, total, steps = full_throttle_traversal()
        assert env.state.visited.all()
        assert total == pytest.approx(1000 - 0.1 * steps, abs=1e-9)

    def test_dynamics_update(self):
        spec = generate_track(0)
        cfg = EnvConfig()
        s = CarState(np.array([0.05, 0.0]), 0.0, 1.0, np.zeros(100, bool), 0)
        nxt, _, _ = transition(spec, s, [0.5, 1.0, 0.25], cfg)
        v = 1.0 + 0.1 - 0.25 * 2 * 0.1 - 0.05 * 1.0 * 0.1
        theta = 0.5 * 1.0 * 0.1 * v / 2.0
        assert nxt.speed == pytest.approx(v)
        assert nxt.heading == pytest.approx(theta)
        np.testing.assert_allclose(nxt.position, [0.05 + v * 0.1 * np.cos(theta), v * 0.1 * np.sin(theta)])

    def test_off_track_terminal(self):
        spec = generate_track(0, STRAIGHT)
        s = CarState(np.array([0.5, 0.45]), np.pi / 2, 2.0, np.zeros(100, bool), 5)
        _, r, done = transition(spec, s, [0, 1, 0])
        assert done and r == pytest.approx(-0.1)

    def test_time_limit(self):
        cfg = EnvConfig(t_max=5)
        env = TrackEnv.from_seed(0, cfg)
        env.reset()
        dones = [env.step([0, 0, 1])[2] for _ in range(5)]
        assert dones == [False] * 4 + [True]

    def test_step_after_terminal(self):
        env = TrackEnv.from_seed(0, EnvConfig(t_max=1))
        env.reset()
        env.step([0, 0, 0])
        with pytest.raises(UsageError):
            env.step([0, 0, 0])

    def test_step_before_reset(self):
        with pytest.raises(UsageError):
            TrackEnv.from_seed(0).step([0, 0, 0])

    def test_actions_clamped(self):
        np.testing.assert_array_equal(clip_action([5, -1, 2]), [1, 0, 1])
        spec = generate_track(0)
        s = initial_state(spec)
        a = transition(spec, s, [5, 7, -3])[0]
        b = transition(spec, s, [1, 1, 0])[0]
        np.testing.assert_array_equal(a.position, b.position)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6))
    def test_random_episode_invariants(self, seed):
        rng = np.random.default_rng(seed)
        env = TrackEnv.from_seed(seed % 50)
        obs = env.reset()
        total, visited, done = 0.0, 0, False
        while not done:
            obs, r, done = env.step(rng.uniform([-1, 0, 0], [1, 1, 1]))
            assert 0 <= env.state.speed <= 2.0
            assert env.state.visited.sum() >= visited
            assert obs.min() >= 0 and obs.max() <= 1
            visited = env.state.visited.sum()
            total += r
        assert total <= 1000 - 0.1 + 1e-9


class TestOracleDynamics:
    def test_agrees_with_step(self):
        rng = np.random.default_rng(0)
        spec = generate_track(11)
        for _ in range(1000):
            s = CarState(
                position=spec.centerline[rng.integers(5, 95)] + rng.normal(scale=0.2, size=2),
                heading=rng.uniform(-1, 1),
                speed=rng.uniform(0, 2),
                visited=rng.random(100) < 0.5,
                tile=0,
            )
            s = CarState(s.position, s.heading, s.speed, s.visited, locate(spec, s.position, 50, span=100)[0])
            a = rng.uniform([-1, 0, 0], [1, 1, 1])
            env = TrackEnv(spec, EnvConfig(), s)
            obs, _, _ = env.step(a)
            o = oracle_dynamics(spec, s, a)
            np.testing.assert_array_equal(o.position, env.state.position)
            np.testing.assert_array_equal(render_observation(spec, o), obs)

    def test_rest_fixed_point(self):
        spec = generate_track(0)
        s = initial_state(spec)
        n = oracle_dynamics(spec, s, [0.3, 0.0, 0.0])
        assert n.speed == s.speed and n.heading == s.heading
        np.testing.assert_array_equal(n.position, s.position)

    def test_full_brake_slows(self):
        spec = generate_track(0, STRAIGHT)
        s = CarState(np.array([0.5, 0.0]), 0.0, 2.0, np.zeros(100, bool), 5)
        assert oracle_dynamics(spec, s, [0, 0, 1]).speed < 2.0

    def test_pure(self):
        spec = generate_track(0)
        s = initial_state(spec)
        before = s.visited.copy()
        oracle_dynamics(spec, s, [0, 1, 0])
        np.testing.assert_array_equal(s.visited, before)


class TestRender:
    def test_far_off_track(self):
        spec = generate_track(0)
        s = CarState(np.array([100.0, 100.0]), 0.0, 1.0, np.zeros(100, bool), 0)
        r = raster(render_observation(spec, s))
        np.testing.assert_array_equal(r[:-1], 0.0)
        assert r[-1, :8].all() and not r[-1, 8:].any()

    def test_straight_track_symmetric(self):
        spec = generate_track(0, STRAIGHT)
        s = CarState(np.array([5.0, 0.0]), 0.0, 0.0, np.zeros(100, bool), 50)
        r = raster(render_observation(spec, s))[:-1]
        np.testing.assert_array_equal(r, r[:, ::-1])
        assert r.sum() > 0

    def test_full_speed_bar(self):
        spec = generate_track(0)
        s = CarState(spec.centerline[10].copy(), 0.0, 2.0, np.zeros(100, bool), 10)
        np.testing.assert_array_equal(raster(render_observation(spec, s))[-1], 1.0)

    def test_deterministic(self):
        spec = generate_track(4)
        s = initial_state(spec)
        np.testing.assert_array_equal(render_observation(spec, s), render_observation(spec, s))
