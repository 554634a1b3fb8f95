"""Dataset tiers of increasing quality for one environment.

* ``random``        uniform policy
* ``expert``        epsilon-greedy around the optimal Q (value iteration)
* ``medium``        epsilon-greedy around an online Q-learner checkpointed at
                    one third of the steps it needed to reach expert level
* ``medium-replay`` everything that learner collected up to the checkpoint
* ``medium-expert`` medium followed by expert
* ``mixed``         random, then medium, then expert, one third each
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .algorithms import AlgorithmState, Hyperparams, act, ql_train_step
from .dataset import (TIERS, Batch, OfflineDataset, from_episodes, generate_dataset, make_mixed,
                      normalize_score, reference_scores)
from .errors import ConfigError
from .evaluation import evaluate_policy
from .mdp import Episode, MdpSpec, Policy, Transition, optimal_q, step

log = logging.getLogger(__name__)


@dataclass
class OnlineTraining:
    """Outcome of the online Q-learning run used for the medium tier."""
    expert_steps: int
    checkpoint_steps: int
    checkpoint: AlgorithmState
    checkpoint_score: float
    episodes: list = field(default_factory=list)
    history: list = field(default_factory=list)   # (env steps, normalized greedy score)


def train_online_q(mdp: MdpSpec, refs, rng: np.random.Generator, hyper=None, max_steps: int = 100_000,
                   check_every: int = 250, eval_episodes: int = 100, expert_level: float = 95.0,
                   expert_window: int = 4) -> OnlineTraining:
    """Online epsilon-greedy Q-learning with experience replay.

    Each environment step appends to a replay buffer and trains on one batch
    that holds the newest transition plus uniform replay draws. Training
    stops at the first check where the greedy policy's normalized score,
    averaged over the last ``expert_window`` checks, is at least
    ``expert_level``; the Q table saved at the last check at or before one
    third of that step count is the checkpoint.
    """
    if expert_window < 1:
        raise ConfigError("expert_window must be >= 1")
    if isinstance(hyper, dict):
        hyper = Hyperparams(**hyper)
    # a small step size lets the greedy policy settle instead of chasing slip noise
    hyper = hyper or Hyperparams(learning_rate=0.05, epsilon=0.2, target_sync_every=100)
    st = AlgorithmState.create("ql", mdp.n_states, mdp.n_actions, hyper)
    eval_rng = np.random.default_rng(rng.integers(2**63))
    span = refs[1] - refs[0]
    cols = (np.zeros(max_steps, dtype=np.int64), np.zeros(max_steps, dtype=np.int64),
            np.zeros(max_steps), np.zeros(max_steps, dtype=np.int64), np.zeros(max_steps, dtype=bool))
    S, A, R, N, D = cols
    episode_ids = np.zeros(max_steps, dtype=np.int64)
    step_ids = np.zeros(max_steps, dtype=np.int64)
    snapshots = {0: st.snapshot()}
    history = []
    state, t, episode, steps = mdp.sample_start(rng), 0, 0, 0
    expert_steps = None
    while steps < max_steps:
        a = act(st, state, "explore", rng)
        nxt, r, done = step(mdp, state, a, rng, step_index=t)
        i = steps
        S[i], A[i], R[i], N[i], D[i] = state, a, r, nxt, done
        episode_ids[i], step_ids[i] = episode, t
        steps += 1
        idx = np.concatenate([[i], rng.integers(0, steps, hyper.batch_size - 1)])
        ql_train_step(st, Batch(S[idx], A[idx], R[idx], N[idx], D[idx]), check=False)
        if done:
            state, t, episode = mdp.sample_start(rng), 0, episode + 1
        else:
            state, t = nxt, t + 1
        if steps % check_every == 0:
            snapshots[steps] = st.snapshot()
            raw, _ = evaluate_policy(mdp, Policy.greedy(st.q), eval_episodes, eval_rng)
            score = 100.0 * (raw - refs[0]) / span
            history.append((steps, score))
            # a single lucky evaluation must not count as reaching expert level
            recent = [sc for _, sc in history[-expert_window:]]
            if len(recent) == expert_window and np.mean(recent) >= expert_level:
                expert_steps = steps
                break
    if expert_steps is None:
        log.warning("online Q-learning did not reach expert level in %d steps", max_steps)
        expert_steps = steps
    ckpt_steps = max(k for k in snapshots if k <= expert_steps // 3)
    ckpt = AlgorithmState.from_snapshot(snapshots[ckpt_steps])
    ckpt_score = dict(history).get(ckpt_steps, float("nan"))
    episodes = _split_episodes(S, A, R, N, D, episode_ids, step_ids, ckpt_steps)
    return OnlineTraining(expert_steps, ckpt_steps, ckpt, ckpt_score, episodes, history)


def _split_episodes(S, A, R, N, D, episode_ids, step_ids, n) -> list:
    episodes, current, last = [], None, None
    for i in range(n):
        if episode_ids[i] != last:
            current = Episode()
            episodes.append(current)
            last = episode_ids[i]
        current.transitions.append(Transition(int(S[i]), int(A[i]), float(R[i]), int(N[i]), bool(D[i]),
                                              int(episode_ids[i]), int(step_ids[i])))
        current.total_return += float(R[i])
    return episodes


def build_tiers(mdp: MdpSpec, n_transitions: int, seed: int = 0, tiers=TIERS, discount: float = 0.99,
                data_epsilon: float = 0.1, ref_episodes: int = 1000, online_kwargs=None):
    """Generate the requested tiers. Returns ``(datasets, info)``.

    ``datasets`` maps tier name to :class:`OfflineDataset`; ``info`` holds the
    references, the medium checkpoint and the online-training trace.
    """
    unknown = [t for t in tiers if t not in TIERS]
    if unknown:
        raise ConfigError(f"unknown tier(s) {unknown}; expected a subset of {TIERS}")
    seeds = np.random.SeedSequence(seed).spawn(5)
    refs = reference_scores(mdp, discount, ref_episodes, seed=int(seeds[0].generate_state(1)[0]))
    need = set(tiers)
    if "mixed" in need:
        need |= {"random", "medium", "expert"}
    if "medium-expert" in need:
        need |= {"medium", "expert"}
    if "medium-replay" in need:
        need.add("medium")

    out, info = {}, {"random_ref": refs[0], "expert_ref": refs[1]}
    if "random" in need:
        out["random"] = generate_dataset(mdp, Policy.uniform(mdp.n_states, mdp.n_actions), n_transitions,
                                         np.random.default_rng(seeds[1]), "random", refs)
    if "expert" in need:
        expert = Policy.epsilon_greedy(optimal_q(mdp, discount), data_epsilon)
        out["expert"] = generate_dataset(mdp, expert, n_transitions, np.random.default_rng(seeds[2]),
                                         "expert", refs)
    if "medium" in need:
        training = train_online_q(mdp, refs, np.random.default_rng(seeds[3]), **(online_kwargs or {}))
        medium = Policy.epsilon_greedy(training.checkpoint.q, data_epsilon)
        out["medium"] = generate_dataset(mdp, medium, n_transitions, np.random.default_rng(seeds[4]),
                                         "medium", refs)
        info.update(expert_steps=training.expert_steps, checkpoint_steps=training.checkpoint_steps,
                    checkpoint_score=training.checkpoint_score, medium_checkpoint=training.checkpoint,
                    online_history=training.history)
        if "medium-replay" in need:
            out["medium-replay"] = from_episodes(training.episodes, mdp, "medium-replay", refs,
                                                 n_transitions=training.checkpoint_steps)
    if "medium-expert" in need:
        out["medium-expert"] = make_mixed([out["medium"], out["expert"]], [0.5, 0.5], tier="medium-expert")
    if "mixed" in need:
        out["mixed"] = make_mixed([out["random"], out["medium"], out["expert"]], [1 / 3, 1 / 3, 1 / 3],
                                  total=n_transitions)
    for name, d in out.items():
        log.info("%s: %d transitions, policy score %.3f (normalized %.1f)", name, len(d),
                 d.meta.dataset_policy_score, normalize_score(d.meta.dataset_policy_score, d.meta))
    return {t: out[t] for t in tiers}, info
