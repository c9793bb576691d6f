import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tdrp.envs import (Env, EnvSpec, EpisodeDone, default_spec, free_mask, scripted_trajectory,
                       skill_a_env, skill_b_env, step_batch, umaze_waypoints)


def test_state_dimensions():
    assert default_spec("umaze", n_distractors=8).state_dim == 10
    assert default_spec("chain", n_distractors=3).state_dim == 4
    assert default_spec("chain2skill").action_dim == 2


@pytest.mark.parametrize("bad", [dict(env_id="maze"), dict(horizon=1), dict(delta=0.0),
                                 dict(n_distractors=-1), dict(env_id="chain2skill", phase="c")])
def test_invalid_spec_rejected(bad):
    with pytest.raises(ValueError):
        EnvSpec(**bad)


def test_chain_forward_steps_reach_goal():
    env = Env(default_spec("chain"))
    env.reset(0)
    results = [env.step([1.0]) for _ in range(10)]
    assert results[-1].success and results[-1].done and results[-1].reward == 1.0
    assert not any(r.success for r in results[:-1])


def test_chain_position_clipped_at_origin():
    env = Env(default_spec("chain"))
    env.reset(0)
    env.step([-1.0])
    assert env.position[0] == 0.0


def test_actions_are_clipped():
    env = Env(default_spec("chain"))
    env.reset(0)
    env.step([50.0])
    assert env.position[0] == pytest.approx(0.1)


def test_horizon_ends_episode_and_further_steps_fail():
    spec = default_spec("chain", horizon=5)
    env = Env(spec)
    env.reset(0)
    for _ in range(5):
        res = env.step([0.0])
    assert res.done and not res.success
    with pytest.raises(EpisodeDone):
        env.step([0.0])


def test_umaze_wall_blocks_only_the_blocked_axis():
    env = Env(default_spec("umaze"))
    env.reset_to([0.1, 0.05], 0)
    env.step([1.0, 1.0])
    # x moves along the corridor, y would enter the wall and stays put
    np.testing.assert_allclose(env.position, [0.2, 0.05])


def test_umaze_pushing_into_wall_leaves_position_unchanged():
    env = Env(default_spec("umaze"))
    env.reset_to([0.1, 0.05], 0)
    env.step([0.0, 1.0])
    np.testing.assert_allclose(env.position, [0.1, 0.05])


def test_umaze_start_and_goal_close_in_raw_space_far_in_steps():
    spec = default_spec("umaze")
    env = Env(spec)
    env.reset(0)
    states, ok = scripted_trajectory(spec, 0)
    assert ok
    raw_gap = np.linalg.norm(env.goal_position() - env.umaze_start())
    assert raw_gap < 1.0 and len(states) - 1 >= 20


def test_distractors_resampled_every_step():
    env = Env(default_spec("umaze", n_distractors=4))
    s0 = env.reset(3)
    s1 = env.step([0.0, 0.0]).state
    np.testing.assert_allclose(s0[:2], s1[:2])
    assert not np.allclose(s0[2:], s1[2:])


def test_same_episode_seed_same_observations():
    spec = default_spec("umaze", n_distractors=3)
    a, b = Env(spec), Env(spec)
    np.testing.assert_array_equal(a.reset(11), b.reset(11))
    np.testing.assert_array_equal(a.step([0.3, -0.2]).state, b.step([0.3, -0.2]).state)


def test_raw_distance_misleads_on_solution_path():
    # start/end of the solution are far apart in time yet closer in raw space
    # than some pair separated by less than half as many steps
    states, ok = scripted_trajectory(default_spec("umaze"), 5)
    assert ok
    pos = np.array(states)[:, :2]
    n = len(pos)
    far_gap, far_dist = n - 1, np.linalg.norm(pos[0] - pos[-1])
    assert any(np.linalg.norm(pos[i] - pos[j]) > far_dist
               for i in range(n) for j in range(i + 1, min(n, i + far_gap // 2)))


def test_batch_step_matches_single_steps():
    spec = default_spec("umaze", n_distractors=2)
    rng = np.random.default_rng(0)
    solo = [Env(spec) for _ in range(4)]
    group = [Env(spec) for _ in range(4)]
    for i, (a, b) in enumerate(zip(solo, group)):
        a.reset(i)
        b.reset(i)
    for _ in range(30):
        acts = rng.uniform(-1, 1, size=(4, 2))
        live = [i for i in range(4) if not solo[i].done]
        if not live:
            break
        singles = [solo[i].step(acts[i]) for i in live]
        batch = step_batch([group[i] for i in live], acts[live])
        for x, y in zip(singles, batch):
            np.testing.assert_array_equal(x.state, y.state)
            assert (x.done, x.success) == (y.done, y.success)


def test_random_policy_rarely_solves_umaze():
    spec = default_spec("umaze")
    rng = np.random.default_rng(1)
    envs = [Env(spec) for _ in range(500)]
    for i, e in enumerate(envs):
        e.reset(i)
    successes = 0
    live = envs
    while live:
        res = step_batch(live, rng.uniform(-1, 1, size=(len(live), 2)))
        successes += sum(r.success for r in res)
        live = [e for e in live if not e.done]
    assert successes / 500 < 0.1


def test_chain2skill_b_requires_opening_band():
    spec = default_spec("chain2skill")
    b = skill_b_env(spec)
    for y, expect in [(0.0, True), (0.25, True), (0.6, False)]:
        env = Env(b)
        env.reset_to([0.95, y], 0)
        while not env.done:
            res = env.step([1.0, 1.0])
        assert res.success == expect
        assert env.position[1] == y  # lateral motion is locked in phase b


def test_chain2skill_a_succeeds_at_handoff_line():
    a = skill_a_env(default_spec("chain2skill"))
    states, ok = scripted_trajectory(a, 0)
    assert ok and np.array(states)[-1, 0] > 0.9


def test_initial_region_membership():
    env = Env(default_spec("chain2skill"))
    assert env.in_initial_region(np.array([0.95, 0.1]))
    assert not env.in_initial_region(np.array([0.95, 0.5]))
    assert not env.in_initial_region(np.array([0.5, 0.0]))


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(-1, 1), st.floats(-1, 1))
def test_umaze_never_enters_walls(x, y, ax, ay):
    spec = default_spec("umaze")
    if not free_mask(spec, np.array([x]), np.array([y]))[0]:
        return
    env = Env(spec)
    env.reset_to([x, y], 0)
    env.step([ax, ay])
    px, py = env.position
    assert free_mask(spec, np.array([px]), np.array([py]))[0]
    assert abs(px - x) <= spec.delta + 1e-12 and abs(py - y) <= spec.delta + 1e-12


def test_waypoints_lie_in_free_space():
    spec = default_spec("umaze")
    wps = np.array(umaze_waypoints(spec))
    assert free_mask(spec, wps[:, 0], wps[:, 1]).all()
