import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqeval_rl.errors import InputError
from seqeval_rl.mdp import (MdpSpec, Policy, chain_mdp, discounted_return, gridworld, load_mdp, mdp_from_config,
                            optimal_q, rollout, save_mdp, step)

from oracles import bfs_shortest_path, chain_tables, discounted_sum, value_iteration_loops

RIGHT_CHAIN = 1


def test_step_deterministic_chain_moves_right():
    mdp = chain_mdp(5)
    assert step(mdp, 0, RIGHT_CHAIN, np.random.default_rng(0)) == (1, 0.0, False)


def test_step_into_goal_is_terminal_with_reward():
    mdp = chain_mdp(3, goal_reward=1.0)
    assert step(mdp, 2, RIGHT_CHAIN, np.random.default_rng(0)) == (3, 1.0, True)


def test_step_fifty_fifty_frequency():
    P = np.zeros((3, 1, 3))
    P[0, 0, 1] = P[0, 0, 2] = 0.5
    P[1, 0, 1] = P[2, 0, 2] = 1.0
    mdp = MdpSpec("coin", P, np.zeros((3, 1, 3)), np.array([1.0, 0, 0]), {1, 2}, 1)
    rng = np.random.default_rng(7)
    hits = sum(step(mdp, 0, 0, rng)[0] == 1 for _ in range(10_000))
    assert abs(hits / 10_000 - 0.5) <= 0.02


def test_step_rejects_bad_ids_and_terminal_state():
    mdp = chain_mdp(3)
    rng = np.random.default_rng(0)
    with pytest.raises(InputError):
        step(mdp, 7, 0, rng)
    with pytest.raises(InputError):
        step(mdp, 0, 2, rng)
    with pytest.raises(InputError):
        step(mdp, 3, 0, rng)


def test_done_at_horizon_boundary():
    mdp = chain_mdp(10, horizon=4)
    _, _, done = step(mdp, 0, RIGHT_CHAIN, np.random.default_rng(0), step_index=3)
    assert done
    _, _, done = step(mdp, 0, RIGHT_CHAIN, np.random.default_rng(0), step_index=2)
    assert not done


def test_rollout_horizon_zero_is_empty():
    mdp = chain_mdp(3, horizon=0)
    ep = rollout(mdp, Policy.uniform(mdp.n_states, 2), np.random.default_rng(0))
    assert len(ep) == 0 and ep.total_return == 0.0


def test_rollout_chain_reward_per_step():
    mdp = chain_mdp(3, step_reward=1.0, goal_reward=0.0)
    right = Policy("tabular-stochastic", np.tile([0.0, 1.0], (4, 1)))
    ep = rollout(mdp, right, np.random.default_rng(0))
    assert ep.total_return == 3.0


def test_gridworld_optimal_return_is_minus_shortest_path():
    walls = [(1, 1), (1, 2), (1, 3), (3, 1), (3, 2)]
    mdp = gridworld(5, 5, walls=walls, start=(0, 0), goal=(4, 4), step_reward=-1.0, goal_reward=0.0)
    ep = rollout(mdp, Policy.greedy(optimal_q(mdp, 0.99)), np.random.default_rng(0))
    assert ep.total_return == -bfs_shortest_path(5, 5, walls, (0, 0), (4, 4))


def test_discounted_return_examples():
    assert discounted_return([1, 1, 1], 0.0) == 1.0
    assert discounted_return([1, 1, 1], 1.0) == 3.0
    assert discounted_return([1, 1, 1], 0.9) == pytest.approx(2.71, abs=1e-12)
    assert discounted_return([], 0.5) == 0.0
    with pytest.raises(InputError):
        discounted_return([1.0], 1.5)


def test_mdp_validation():
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = 0.9
    with pytest.raises(InputError):
        MdpSpec("bad", P, np.zeros((2, 1, 2)), np.array([1.0, 0.0]), {1}, 5)
    P[0, 0, 1] = 1.0
    with pytest.raises(InputError):
        MdpSpec("bad", P, np.zeros((2, 1, 2)), np.array([0.5, 0.4]), {1}, 5)


def test_policy_validation_and_tie_break():
    with pytest.raises(InputError):
        Policy("tabular-stochastic", [[0.5, 0.6]])
    with pytest.raises(InputError):
        Policy.epsilon_greedy([[0.0, 1.0]], 1.5)
    assert Policy.greedy([[0.3, 0.3]]).act(0, np.random.default_rng(0)) == 0


def test_chain_matches_hand_tables():
    P, R, terminal = chain_tables(6, step_reward=-0.5, goal_reward=2.0, slip=0.2)
    mdp = chain_mdp(6, step_reward=-0.5, goal_reward=2.0, slip=0.2)
    np.testing.assert_array_equal(mdp.transition, P)
    np.testing.assert_array_equal(mdp.reward, R)
    assert mdp.terminal_states == terminal


def test_optimal_q_matches_loop_value_iteration():
    mdp = gridworld(4, 3, walls=[(1, 1)], slip=0.2)
    ref = value_iteration_loops(mdp.transition, mdp.reward, mdp.terminal_states, 0.9)
    np.testing.assert_allclose(optimal_q(mdp, 0.9), ref, atol=1e-9)


def test_gridworld_start_any_covers_free_cells():
    mdp = gridworld(3, 3, walls=[(1, 1)], start="any")
    free = [s for s in range(9) if s not in (4, 8)]
    assert np.allclose(mdp.start_distribution[free], 1 / 7)
    assert mdp.start_distribution[4] == 0 and mdp.start_distribution[8] == 0


def test_save_load_round_trip(tmp_path):
    mdp = gridworld(3, 3, walls=[(0, 1)], slip=0.1, horizon=12)
    save_mdp(mdp, tmp_path / "env.yaml")
    back = load_mdp(tmp_path / "env.yaml")
    np.testing.assert_allclose(back.transition, mdp.transition, atol=1e-15)
    np.testing.assert_array_equal(back.reward[mdp.transition > 0], mdp.reward[mdp.transition > 0])
    assert back.terminal_states == mdp.terminal_states and back.horizon == 12


def test_mdp_from_config_kinds(tmp_path):
    assert mdp_from_config({"kind": "chain", "length": 4}).n_states == 5
    assert mdp_from_config({"kind": "gridworld", "width": 2, "height": 2}).n_actions == 4
    with pytest.raises(InputError):
        mdp_from_config({"kind": "maze"})


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), slip=st.floats(0.0, 0.5), horizon=st.integers(1, 30))
def test_rollout_properties(seed, slip, horizon):
    mdp = gridworld(4, 4, walls=[(1, 2)], slip=slip, start="any", horizon=horizon)
    pi = Policy.uniform(mdp.n_states, 4)
    a = rollout(mdp, pi, np.random.default_rng(seed))
    b = rollout(mdp, pi, np.random.default_rng(seed))
    assert a.transitions == b.transitions and a.total_return == b.total_return
    assert len(a) <= horizon
    for first, second in zip(a.transitions, a.transitions[1:]):
        assert first.next_state == second.state
    assert a.total_return == pytest.approx(sum(a.rewards), abs=1e-9)
    assert discounted_return(a.rewards, 1.0) == pytest.approx(a.total_return, abs=1e-9)
    for k, t in enumerate(a.transitions):
        assert t.done == (t.next_state in mdp.terminal_states or k == horizon - 1)


@given(st.lists(st.floats(-10, 10), max_size=20), st.floats(0.0, 1.0))
def test_discounted_return_matches_direct_sum(rewards, discount):
    assert discounted_return(rewards, discount) == pytest.approx(discounted_sum(rewards, discount), abs=1e-9)
