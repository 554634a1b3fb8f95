import time

import numpy as np
import pytest

from seqeval_rl.dataset import DatasetMeta, OfflineDataset, Segment
from seqeval_rl.errors import InputError
from seqeval_rl.evaluation import evaluate_policy, fqe_fit, fqe_score
from seqeval_rl.mdp import Policy, chain_mdp, gridworld, optimal_q

from oracles import chain_tables, finite_horizon_value, policy_value_linear


def full_coverage_dataset(mdp, copies=1, rng=None):
    """One record per (non-terminal state, action, successor) with the successor's probability mass as count."""
    rows = []
    for s in range(mdp.n_states):
        if s in mdp.terminal_states:
            continue
        for a in range(mdp.n_actions):
            nxt = np.flatnonzero(mdp.transition[s, a])
            if len(nxt) > 1:
                raise ValueError("use a deterministic MDP")
            s2 = int(nxt[0])
            for _ in range(copies):
                rows.append((s, a, float(mdp.reward[s, a, s2]), s2, s2 in mdp.terminal_states))
    if rng is not None:
        rows = [rows[i] for i in rng.permutation(len(rows))]
    s, a, r, s2, d = (np.array(c) for c in zip(*rows))
    n = len(rows)
    meta = DatasetMeta(mdp.name, "random", -1.0, 0.0, 0.0, mdp.n_states, mdp.n_actions)
    return OfflineDataset(s, a, r, s2, d, np.arange(n), np.zeros(n, dtype=int), [Segment("random", 0, n)], meta)


def test_deterministic_policy_has_zero_std():
    mdp = chain_mdp(4, step_reward=-1.0, goal_reward=0.0)
    mean, std = evaluate_policy(mdp, Policy.greedy(optimal_q(mdp, 0.9)), 20, np.random.default_rng(0))
    assert mean == -4.0 and std == 0.0


def test_single_episode_std_is_zero():
    mdp = chain_mdp(4, slip=0.3)
    _, std = evaluate_policy(mdp, Policy.uniform(5, 2), 1, np.random.default_rng(0))
    assert std == 0.0
    with pytest.raises(InputError):
        evaluate_policy(mdp, Policy.uniform(5, 2), 0, np.random.default_rng(0))


def test_random_policy_mean_matches_exact_value():
    mdp = chain_mdp(4, step_reward=-1.0, goal_reward=0.0, horizon=30)
    P, R, terminal = chain_tables(4, step_reward=-1.0, goal_reward=0.0)
    pi = np.full((5, 2), 0.5)
    exact = finite_horizon_value(P, R, terminal, pi, 30)[0]
    mean, std = evaluate_policy(mdp, Policy.uniform(5, 2), 1000, np.random.default_rng(3))
    assert abs(mean - exact) <= 3 * std / np.sqrt(1000)


def test_evaluate_policy_is_unbiased_over_repetitions():
    mdp = gridworld(3, 3, slip=0.2, start="any", horizon=15)
    pi = Policy.uniform(9, 4)
    exact = mdp.start_distribution @ finite_horizon_value(mdp.transition, mdp.reward, mdp.terminal_states,
                                                          pi.probabilities(), 15)
    rng = np.random.default_rng(5)
    means = [evaluate_policy(mdp, pi, 20, rng)[0] for _ in range(200)]
    assert abs(np.mean(means) - exact) <= 3 * np.std(means, ddof=1) / np.sqrt(len(means))


def test_fqe_zero_discount_is_expected_immediate_reward():
    mdp = gridworld(3, 3, walls=[(1, 1)], step_reward=-1.0, goal_reward=5.0, start="any")
    data = full_coverage_dataset(mdp)
    pol = Policy.greedy(optimal_q(mdp, 0.9))
    expected = sum(mdp.start_distribution[s] * mdp.expected_reward()[s, pol.act(s, None)]
                   for s in range(9) if mdp.start_distribution[s] > 0)
    score = fqe_score(data, pol, 0.0, 5, start_distribution=mdp.start_distribution)
    assert score == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("policy_kind", ["greedy", "uniform", "epsilon"])
def test_fqe_matches_linear_solve(policy_kind):
    mdp = gridworld(4, 4, walls=[(1, 1), (2, 1)], step_reward=-1.0, goal_reward=1.0, start="any")
    q_star = optimal_q(mdp, 0.9)
    pol = {"greedy": Policy.greedy(q_star), "uniform": Policy.uniform(16, 4),
           "epsilon": Policy.epsilon_greedy(q_star, 0.3)}[policy_kind]
    data = full_coverage_dataset(mdp, copies=2, rng=np.random.default_rng(0))
    v = policy_value_linear(mdp.transition, mdp.reward, mdp.terminal_states, pol.probabilities(), 0.9)
    start = time.perf_counter()
    res = fqe_fit(data, pol, 0.9, 1000, start_distribution=mdp.start_distribution)
    assert time.perf_counter() - start < 5.0
    assert abs(res.score - mdp.start_distribution @ v) <= 1e-3
    assert res.coverage == 1.0 and res.missing == []


def test_fqe_sweeps_contract_by_discount():
    mdp = gridworld(4, 4, walls=[(2, 2)], step_reward=-1.0, start="any")
    data = full_coverage_dataset(mdp)
    res = fqe_fit(data, Policy.uniform(16, 4), 0.8, 60, start_distribution=mdp.start_distribution)
    d = res.sweep_deltas
    for prev, nxt in zip(d, d[1:]):
        if prev > 1e-12:
            assert nxt <= 0.8 * prev + 1e-12


def test_fqe_zero_iterations_scores_zero():
    mdp = chain_mdp(3)
    assert fqe_score(full_coverage_dataset(mdp), Policy.uniform(4, 2), 0.9, 0) == 0.0


def test_fqe_flags_missing_pairs():
    mdp = chain_mdp(3, step_reward=-1.0, goal_reward=0.0)
    data = full_coverage_dataset(mdp)
    keep = data.actions == 0
    part = data.take(np.flatnonzero(keep))
    res = fqe_fit(part, Policy.greedy(np.tile([0.0, 1.0], (4, 1))), 0.9, 10,
                  start_distribution=mdp.start_distribution)
    assert (0, 1) in res.missing and res.coverage < 1.0 and res.q[0, 1] == 0.0


def test_fqe_default_start_distribution_uses_first_steps():
    mdp = chain_mdp(3, step_reward=-1.0, goal_reward=0.0)
    data = full_coverage_dataset(mdp)
    pol = Policy.greedy(optimal_q(mdp, 0.9))
    # step_index is 0 on every record, so the start distribution is the empirical state mix
    emp = np.bincount(data.states, minlength=4) / len(data)
    assert fqe_score(data, pol, 0.9, 100) == pytest.approx(fqe_score(data, pol, 0.9, 100, start_distribution=emp))


def test_fqe_rejects_empty_and_mismatched():
    mdp = chain_mdp(3)
    data = full_coverage_dataset(mdp)
    with pytest.raises(InputError):
        fqe_score(data.take(np.zeros(0, dtype=int)), Policy.uniform(4, 2), 0.9, 3)
    with pytest.raises(InputError):
        fqe_score(data, Policy.uniform(5, 2), 0.9, 3)
