import numpy as np
import pytest

from cpdbench.env import (
    ACT_DIM,
    DROP_PENALTY,
    IPHI,
    IX,
    IY,
    ObjectSpec,
    env_reset,
    env_step,
    episode_z_rotation,
    make_task_family,
    observe,
    reward_fn,
)


def quiet_spec(**overrides):
    """A deterministic single-object spec with no noise."""
    kwargs = dict(
        object_id=0,
        n_objects=1,
        gain=np.zeros((6, 8)),
        coupling=np.eye(6),
        noise_scale=0.0,
        drop_threshold=15.0,
        seed_base=7,
    )
    kwargs.update(overrides)
    return ObjectSpec(**kwargs)


class TestFamily:
    def test_single_task(self):
        specs = make_task_family(1, 42)
        assert len(specs) == 1
        assert specs[0].object_id == 0
        assert specs[0].n_objects == 1

    def test_deterministic(self):
        a = make_task_family(5, 42)
        b = make_task_family(5, 42)
        for s, t in zip(a, b):
            assert np.array_equal(s.gain, t.gain)
            assert np.array_equal(s.coupling, t.coupling)
            assert s.seed_base == t.seed_base

    def test_pairwise_gain_distance(self):
        specs = make_task_family(5, 42)
        for i in range(5):
            for j in range(i + 1, 5):
                assert np.linalg.norm(specs[i].gain - specs[j].gain) >= 0.5

    def test_phi_row_solvable(self):
        for spec in make_task_family(5, 1):
            assert np.any(spec.gain[IPHI] > 0)

    def test_rejects_bad_k(self):
        with pytest.raises(ValueError):
            make_task_family(0, 1)

    def test_rejects_noise_above_drop(self):
        with pytest.raises(ValueError):
            make_task_family(2, 1, noise_scale=20.0, drop_threshold=10.0)


class TestReset:
    def test_zero_initial_pose(self):
        state = env_reset(quiet_spec(), 0)
        assert np.all(state.pose == 0.0)
        assert not state.done

    def test_same_seed_same_state(self):
        spec = quiet_spec(noise_scale=0.5)
        s1 = env_reset(spec, 3)
        s2 = env_reset(spec, 3)
        env_step(s1, np.ones(8))
        env_step(s2, np.ones(8))
        assert np.array_equal(s1.pose, s2.pose)

    def test_different_seed_same_pose_different_stream(self):
        spec = quiet_spec(noise_scale=0.5)
        s1 = env_reset(spec, 1)
        s2 = env_reset(spec, 2)
        assert np.array_equal(s1.pose, s2.pose)
        env_step(s1, np.zeros(8))
        env_step(s2, np.zeros(8))
        assert not np.array_equal(s1.pose, s2.pose)


class TestStep:
    def test_null_dynamics(self):
        state = env_reset(quiet_spec(), 0)
        _, _, reward, _ = env_step(state, np.zeros(8))
        assert reward == 0.0
        assert np.all(state.pose == 0.0)

    def test_pure_phi_reward(self):
        gain = np.zeros((6, 8))
        gain[IPHI, 0] = 0.1
        state = env_reset(quiet_spec(gain=gain), 0)
        action = np.zeros(8)
        action[0] = 1.0
        _, _, reward, _ = env_step(state, action)
        assert abs(reward - 100.0) < 1e-12

    def test_action_clamped(self):
        gain = np.zeros((6, 8))
        gain[IPHI, 0] = 0.1
        state = env_reset(quiet_spec(gain=gain), 0)
        _, _, reward, _ = env_step(state, np.full(8, 50.0))
        assert abs(reward - 100.0) < 1e-12

    def test_replay_identical(self):
        spec = quiet_spec(noise_scale=0.3)
        rng = np.random.default_rng(0)
        actions = rng.uniform(-1, 1, size=(30, 8))
        rewards = []
        for _run in range(2):
            state = env_reset(spec, 5)
            rewards.append([env_step(state, a)[2] for a in actions])
        assert rewards[0] == rewards[1]

    def test_time_limit(self):
        state = env_reset(quiet_spec(), 0, episode_length=3)
        for _ in range(2):
            _, _, _, done = env_step(state, np.zeros(8))
            assert not done
        _, _, _, done = env_step(state, np.zeros(8))
        assert done
        with pytest.raises(RuntimeError):
            env_step(state, np.zeros(8))

    def test_drop_terminates_with_penalty(self):
        gain = np.zeros((6, 8))
        gain[IX, 0] = 10.0
        state = env_reset(quiet_spec(gain=gain, drop_threshold=5.0), 0)
        action = np.zeros(8)
        action[0] = 1.0
        _, _, reward, done = env_step(state, action)
        assert done
        assert reward < DROP_PENALTY + 1.0  # penalty plus the drift cost

    def test_observation_layout(self):
        spec = quiet_spec(n_objects=4, object_id=0)
        spec.object_id = 2
        state = env_reset(spec, 0)
        obs = observe(state)
        assert obs.size == 6 + ACT_DIM + 4
        one_hot = obs[14:]
        assert one_hot.sum() == 1.0
        assert np.count_nonzero(one_hot) == 1
        assert one_hot[2] == 1.0


class TestReward:
    def test_no_change_no_reward(self):
        p = np.arange(6.0)
        assert reward_fn(p, p) == 0.0

    def test_hand_computed_case(self):
        prev = np.zeros(6)
        curr = np.array([0.05, 0.0, 0.7, 0.2, 0.1, 0.0])  # dz ignored
        assert abs(reward_fn(prev, curr) - 199.85) < 1e-12

    def test_negative_phi(self):
        prev = np.zeros(6)
        curr = np.zeros(6)
        curr[IPHI] = -0.1
        assert abs(reward_fn(prev, curr) + 100.0) < 1e-12

    def test_z_change_free(self):
        prev = np.zeros(6)
        curr = np.zeros(6)
        curr[2] = 123.0
        assert reward_fn(prev, curr) == 0.0


class TestZRotation:
    def test_constant_phi(self):
        assert episode_z_rotation([1.0, 1.0, 1.0]) == 0.0

    def test_telescoping(self):
        assert episode_z_rotation([0.0, 30.0, 90.0]) == 90.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            episode_z_rotation([0.0])

    def test_matches_sum_of_deltas(self):
        rng = np.random.default_rng(3)
        phis = np.cumsum(rng.normal(size=50))
        deltas = np.diff(phis)
        assert abs(episode_z_rotation(phis) - deltas.sum()) < 1e-9


class TestTelescopingInvariant:
    def test_phi_reward_component_equals_total_rotation(self):
        spec = quiet_spec(
            gain=np.random.default_rng(0).normal(size=(6, 8)) * 0.1,
            noise_scale=0.05,
            drop_threshold=1e9,
        )
        rng = np.random.default_rng(1)
        state = env_reset(spec, 9)
        phis = [state.pose[IPHI]]
        phi_reward = 0.0
        done = False
        while not done:
            prev_phi = state.pose[IPHI]
            _, _, _, done = env_step(state, rng.uniform(-1, 1, size=8))
            phi_reward += 1000.0 * (state.pose[IPHI] - prev_phi)
            phis.append(state.pose[IPHI])
        assert abs(phi_reward - 1000.0 * episode_z_rotation(phis)) < 1e-9
