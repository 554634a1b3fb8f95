"""Policy scoring: simulator rollouts, or Fitted Q Evaluation from data."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dataset import OfflineDataset
from .errors import InputError
from .mdp import MdpSpec, Policy, rollout

log = logging.getLogger(__name__)


def evaluate_policy(mdp: MdpSpec, policy: Policy, n_episodes: int, rng: np.random.Generator):
    """Mean and standard deviation of undiscounted episode returns.

    The standard deviation uses ``ddof=1``; a single episode reports 0.
    """
    if n_episodes < 1:
        raise InputError("n_episodes must be >= 1")
    returns = np.array([rollout(mdp, policy, rng).total_return for _ in range(n_episodes)])
    std = float(returns.std(ddof=1)) if n_episodes > 1 else 0.0
    return float(returns.mean()), std


@dataclass
class FQEResult:
    q: np.ndarray
    score: float
    coverage: float          # fraction of (s, pi(s)) pairs, over states with pi mass, seen in data
    missing: list            # (state, action) pairs pi needs that the data never shows
    sweep_deltas: list       # sup-norm change per sweep


def fqe_fit(dataset: OfflineDataset, policy: Policy, discount: float, iterations: int,
            start_distribution=None) -> FQEResult:
    """Tabular FQE by synchronous sweeps of the evaluation Bellman backup.

    Each sweep sets Q(s, a) to the mean over dataset transitions from
    ``(s, a)`` of ``r + (1 - done) * discount * sum_a' pi(a'|s') Q(s', a')``.
    Pairs never seen keep their zero initialization. ``start_distribution``
    defaults to the empirical distribution of first states (``step_index == 0``).
    """
    if len(dataset) == 0:
        raise InputError("FQE needs a non-empty dataset")
    if iterations < 0:
        raise InputError("iterations must be >= 0")
    S, A = dataset.meta.n_states, dataset.meta.n_actions
    if policy.n_states != S or policy.n_actions != A:
        raise InputError("policy dimensions do not match the dataset")
    pi = policy.probabilities()

    if start_distribution is None:
        firsts = dataset.states[dataset.step_indices == 0]
        if firsts.size == 0:
            raise InputError("dataset holds no episode starts; pass start_distribution")
        start_distribution = np.bincount(firsts, minlength=S) / firsts.size
    start_distribution = np.asarray(start_distribution, dtype=float)

    flat = dataset.states * A + dataset.actions
    counts = np.bincount(flat, minlength=S * A)
    seen = counts > 0
    live = ~dataset.dones
    q = np.zeros(S * A)
    deltas = []
    for _ in range(iterations):
        v = (q.reshape(S, A) * pi).sum(axis=1)
        targets = dataset.rewards + live * discount * v[dataset.next_states]
        sums = np.bincount(flat, weights=targets, minlength=S * A)
        new = np.divide(sums, counts, out=np.zeros(S * A), where=seen)
        deltas.append(float(np.max(np.abs(new - q))))
        q = new
    q = q.reshape(S, A)

    # states whose value the backup or the score actually reads
    used = np.zeros(S, dtype=bool)
    used[dataset.next_states[live]] = True
    used[start_distribution > 0] = True
    required = [(int(s), int(a)) for s in np.flatnonzero(used) for a in np.flatnonzero(pi[s] > 0)]
    missing = [(s, a) for s, a in required if not seen[s * A + a]]
    coverage = 1.0 - len(missing) / len(required) if required else 1.0
    if missing:
        log.info("FQE: %d (state, action) pairs required by the policy are absent from the data",
                 len(missing))
    score = float(start_distribution @ (q * pi).sum(axis=1))
    return FQEResult(q, score, coverage, missing, deltas)


def fqe_score(dataset: OfflineDataset, policy: Policy, discount: float, iterations: int,
              start_distribution=None) -> float:
    """E_{s0}[Q_hat(s0, pi(s0))], with Q_hat fitted from scratch on ``dataset``."""
    return fqe_fit(dataset, policy, discount, iterations, start_distribution).score
