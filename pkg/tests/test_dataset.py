import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqeval_rl.dataset import (DatasetMeta, OfflineDataset, Segment, generate_dataset, load_dataset, make_mixed,
                                normalize_score, reference_scores, save_dataset, shuffle_dataset)
from seqeval_rl.errors import DatasetFormatError, DatasetValidationError, DegenerateReference, InputError
from seqeval_rl.mdp import Policy, chain_mdp, gridworld, optimal_q, rollout

from oracles import finite_horizon_value

REFS = (-20.0, -5.0)


def _grid():
    return gridworld(4, 4, walls=[(1, 1)], slip=0.1, start="any", horizon=20)


def _rows(d):
    return list(zip(d.states.tolist(), d.actions.tolist(), d.rewards.tolist(), d.next_states.tolist(),
                    d.dones.tolist(), d.step_indices.tolist()))


def _episodes(d):
    starts = d.episode_starts()
    ends = np.append(starts[1:], len(d))
    return [list(range(a, b)) for a, b in zip(starts, ends)]


def test_random_dataset_score_matches_exact_random_value():
    mdp = _grid()
    uniform = Policy.uniform(mdp.n_states, 4)
    d = generate_dataset(mdp, uniform, 100, np.random.default_rng(3), "random", REFS)
    assert len(d) == 100 and d.meta.tier == "random"
    # Monte Carlo reference, 1000 independent rollouts
    rng = np.random.default_rng(11)
    returns = [rollout(mdp, uniform, rng).total_return for _ in range(1000)]
    se = np.std(returns, ddof=1) / math.sqrt(1000)
    exact = mdp.start_distribution @ finite_horizon_value(mdp.transition, mdp.reward, mdp.terminal_states,
                                                          uniform.probabilities(), mdp.horizon)
    assert abs(np.mean(returns) - exact) <= 3 * se
    big = generate_dataset(mdp, uniform, 20_000, np.random.default_rng(4), "random", REFS)
    n_eps = len(big.complete_episode_returns())
    se_big = np.std(returns, ddof=1) / math.sqrt(n_eps)
    assert abs(big.meta.dataset_policy_score - exact) <= 3 * se_big


def test_greedy_optimal_on_deterministic_chain_is_exact():
    mdp = chain_mdp(5, step_reward=-1.0, goal_reward=0.0)
    d = generate_dataset(mdp, Policy.greedy(optimal_q(mdp, 0.99)), 23, np.random.default_rng(0), "expert", REFS)
    assert d.meta.dataset_policy_score == -5.0
    eps = _episodes(d)
    assert all(_rows(d)[i[0]: i[-1] + 1] == _rows(d)[eps[0][0]: eps[0][-1] + 1] for i in eps[:-1])


def test_generate_dataset_episodes_chain_and_ids_increase():
    d = generate_dataset(_grid(), Policy.uniform(16, 4), 500, np.random.default_rng(1), "random", REFS)
    assert np.all(np.diff(d.episode_ids) >= 0)
    for ep in _episodes(d):
        for i, j in zip(ep, ep[1:]):
            assert d.next_states[i] == d.states[j] and not d.dones[i]
        assert d.step_indices[ep[0]] == 0


def test_generate_dataset_rejects_mismatched_policy():
    with pytest.raises(InputError):
        generate_dataset(_grid(), Policy.uniform(3, 4), 10, np.random.default_rng(0), "random", REFS)
    with pytest.raises(InputError):
        generate_dataset(_grid(), Policy.uniform(16, 4), 0, np.random.default_rng(0), "random", REFS)


def _three_parts(n=300):
    mdp = chain_mdp(4, step_reward=-1.0, goal_reward=0.0, horizon=10)
    pol = Policy.greedy(optimal_q(mdp, 0.99))  # 4-step episodes, so 300 is not a boundary
    parts = []
    for tier, seed in (("random", 0), ("medium", 1), ("expert", 2)):
        p = Policy.uniform(5, 2) if tier == "random" else pol
        parts.append(generate_dataset(mdp, p, n, np.random.default_rng(seed), tier, REFS))
    return parts


def test_make_mixed_boundaries_and_labels():
    mdp = chain_mdp(1, step_reward=-1.0, goal_reward=0.0)  # every episode is one step
    parts = [generate_dataset(mdp, Policy.uniform(2, 2), 300, np.random.default_rng(s), t, REFS)
             for s, t in enumerate(("random", "medium", "expert"))]
    mixed = make_mixed(parts, [1 / 3, 1 / 3, 1 / 3])
    assert len(mixed) == 900
    assert [(s.label, s.start, s.end) for s in mixed.segments] == [
        ("random", 0, 300), ("medium", 300, 600), ("expert", 600, 900)]
    assert mixed.meta.tier == "mixed"


def test_make_mixed_identity_and_episode_boundaries():
    parts = _three_parts()
    single = make_mixed([parts[0]], [1.0])
    assert _rows(single) == _rows(parts[0]) and len(single.segments) == 1
    mixed = make_mixed(parts, [1 / 3, 1 / 3, 1 / 3])
    starts = set(mixed.episode_starts().tolist())
    assert all(s.start in starts for s in mixed.segments)
    assert np.all(np.diff(mixed.episode_ids) >= 0)
    assert [s.label for s in mixed.segments] == ["random", "medium", "expert"]


def test_make_mixed_rejects_other_env():
    a = generate_dataset(chain_mdp(3), Policy.uniform(4, 2), 50, np.random.default_rng(0), "random", REFS)
    b = generate_dataset(chain_mdp(3, name="other"), Policy.uniform(4, 2), 50, np.random.default_rng(0),
                         "expert", REFS)
    with pytest.raises(InputError):
        make_mixed([a, b], [0.5, 0.5])
    with pytest.raises(InputError):
        make_mixed([a, a], [0.5, 0.6])


def test_shuffle_deterministic_permutation_within_segments():
    mixed = make_mixed(_three_parts(), [1 / 3, 1 / 3, 1 / 3])
    a, b = shuffle_dataset(mixed, 5), shuffle_dataset(mixed, 5)
    assert a == b
    assert Counter(_rows(a)) == Counter(_rows(mixed))
    assert a.segments == mixed.segments
    for seg in mixed.segments:
        assert Counter(_rows(a)[seg.start: seg.end]) == Counter(_rows(mixed)[seg.start: seg.end])
    # every transition's episode stays inside the segment it came from
    for seg in a.segments:
        ids = set(a.episode_ids[seg.start: seg.end].tolist())
        assert ids <= set(mixed.episode_ids[seg.start: seg.end].tolist())
    assert shuffle_dataset(mixed, 6) != a


def test_shuffle_keeps_episodes_whole():
    d = generate_dataset(_grid(), Policy.uniform(16, 4), 400, np.random.default_rng(2), "random", REFS)
    s = shuffle_dataset(d, 1)
    for ep in _episodes(s):
        assert list(s.step_indices[ep]) == list(range(len(ep)))


def test_round_trip_is_bit_identical(tmp_path):
    d = make_mixed(_three_parts(), [0.2, 0.3, 0.5])
    save_dataset(d, tmp_path / "d.txt")
    back = load_dataset(tmp_path / "d.txt")
    assert back == d
    assert back.rewards.tobytes() == d.rewards.tobytes()
    save_dataset(back, tmp_path / "e.txt")
    assert (tmp_path / "d.txt").read_bytes() == (tmp_path / "e.txt").read_bytes()


def test_truncated_file_is_a_format_error(tmp_path):
    d = generate_dataset(_grid(), Policy.uniform(16, 4), 50, np.random.default_rng(0), "random", REFS)
    save_dataset(d, tmp_path / "d.txt")
    text = (tmp_path / "d.txt").read_text()
    (tmp_path / "cut.txt").write_text(text[: len(text) // 2])
    with pytest.raises(DatasetFormatError):
        load_dataset(tmp_path / "cut.txt")
    lines = text.splitlines(keepends=True)
    (tmp_path / "short.txt").write_text("".join(lines[:-5]))
    with pytest.raises(DatasetFormatError) as info:
        load_dataset(tmp_path / "short.txt")
    assert info.value.record == 45


def test_out_of_range_state_is_a_validation_error(tmp_path):
    d = generate_dataset(_grid(), Policy.uniform(16, 4), 20, np.random.default_rng(0), "random", REFS)
    save_dataset(d, tmp_path / "d.txt")
    lines = (tmp_path / "d.txt").read_text().splitlines()
    first = lines.index("state,action,reward,next_state,done,episode_id,step_index") + 1
    fields = lines[first + 3].split(",")
    fields[3] = "16"
    lines[first + 3] = ",".join(fields)
    (tmp_path / "bad.txt").write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetValidationError) as info:
        load_dataset(tmp_path / "bad.txt")
    assert info.value.record == 3


def test_malformed_record_names_record(tmp_path):
    d = generate_dataset(_grid(), Policy.uniform(16, 4), 20, np.random.default_rng(0), "random", REFS)
    save_dataset(d, tmp_path / "d.txt")
    text = (tmp_path / "d.txt").read_text().replace("\n", "\nx,", 12)
    (tmp_path / "bad.txt").write_text(text)
    with pytest.raises(DatasetFormatError):
        load_dataset(tmp_path / "bad.txt")


def _meta(lo, hi):
    return DatasetMeta("env", "random", lo, hi, 0.0, 1, 1)


def test_normalize_score_examples():
    m = _meta(-30.0, 10.0)
    assert normalize_score(-30.0, m) == 0.0
    assert normalize_score(10.0, m) == 100.0
    assert normalize_score(-10.0, m) == 50.0
    with pytest.raises(DegenerateReference):
        normalize_score(1.0, _meta(2.0, 2.0))


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(0.1, 1e3))
def test_normalize_score_formula(raw, lo, span):
    hi = lo + span
    assert normalize_score(raw, _meta(lo, hi)) == pytest.approx(100.0 * (raw - lo) / (hi - lo), rel=1e-12, abs=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.floats(0.05, 1.0), min_size=1, max_size=3))
def test_mix_then_shuffle_preserves_segment_multisets(seed, weights):
    parts = _three_parts(120)[: len(weights)]
    props = [w / sum(weights) for w in weights]
    props[-1] = 1.0 - sum(props[:-1])
    mixed = make_mixed(parts, props)
    shuffled = shuffle_dataset(mixed, seed)
    for seg in mixed.segments:
        assert Counter(_rows(shuffled)[seg.start: seg.end]) == Counter(_rows(mixed)[seg.start: seg.end])


def test_reference_scores_ordering():
    lo, hi = reference_scores(_grid(), n_episodes=200, seed=0)
    assert hi > lo


def test_offline_dataset_segments_must_partition():
    cols = [np.zeros(3, dtype=int)] * 2 + [np.zeros(3)] + [np.zeros(3, dtype=int), np.zeros(3, dtype=bool),
                                                          np.zeros(3, dtype=int), np.zeros(3, dtype=int)]
    with pytest.raises(InputError):
        OfflineDataset(*cols, segments=[Segment("random", 0, 2)], meta=_meta(0.0, 1.0))
