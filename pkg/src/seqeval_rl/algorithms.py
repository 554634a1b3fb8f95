"""Tabular offline learners sharing one train-step / act contract.

Four learners are provided:

* ``bc``    behavior cloning by action counting
* ``ql``    TD Q-learning against a periodically synced target table
* ``cql``   Q-learning plus the tabular gradient of a logsumexp-minus-data
            penalty (conservative Q-learning analog)
* ``bcreg`` Q-learning plus an additive bonus on dataset actions
            (TD3+BC analog)

Batch updates: every batch element produces an update for its ``(s, a)``
entry (TD) or its state row (regularizers). Duplicates inside a batch are
averaged, so a batch holding one transition applies exactly the
single-sample rule and any learning rate in (0, 1] stays stable.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import Batch
from .errors import InputError
from .mdp import Policy

ALGORITHMS = ("bc", "ql", "cql", "bcreg")


@dataclass
class Hyperparams:
    learning_rate: float = 0.1
    discount: float = 0.99
    cql_alpha: float = 1.0
    bc_weight: float = 1.0
    target_sync_every: int = 100
    batch_size: int = 32
    epsilon: float = 0.1  # explore-mode epsilon

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InputError("learning_rate must be > 0")
        if not 0.0 <= self.discount <= 1.0:
            raise InputError("discount must lie in [0, 1]")
        if self.cql_alpha < 0 or self.bc_weight < 0:
            raise InputError("cql_alpha and bc_weight must be >= 0")
        if self.target_sync_every < 1 or self.batch_size < 1:
            raise InputError("target_sync_every and batch_size must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise InputError("epsilon must lie in [0, 1]")


@dataclass
class AlgorithmState:
    algorithm: str
    q: np.ndarray
    target_q: np.ndarray
    policy_counts: np.ndarray
    hyper: Hyperparams = field(default_factory=Hyperparams)
    steps: int = 0

    @classmethod
    def create(cls, algorithm: str, n_states: int, n_actions: int, hyper=None) -> "AlgorithmState":
        if algorithm not in ALGORITHMS:
            raise InputError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
        return cls(algorithm, np.zeros((n_states, n_actions)), np.zeros((n_states, n_actions)),
                   np.zeros((n_states, n_actions), dtype=np.int64), hyper or Hyperparams())

    @property
    def n_states(self) -> int:
        return self.q.shape[0]

    @property
    def n_actions(self) -> int:
        return self.q.shape[1]

    def bc_policy(self) -> np.ndarray:
        """Empirical action frequencies per state; uniform where unvisited."""
        counts = self.policy_counts.astype(float)
        totals = counts.sum(axis=1, keepdims=True)
        uniform = np.full_like(counts, 1.0 / self.n_actions)
        return np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), uniform)

    def snapshot(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "q": self.q.tolist(),
            "target_q": self.target_q.tolist(),
            "policy_counts": self.policy_counts.tolist(),
            "hyper": asdict(self.hyper),
            "steps": self.steps,
        }

    @classmethod
    def from_snapshot(cls, snap: dict) -> "AlgorithmState":
        return cls(snap["algorithm"], np.array(snap["q"], dtype=float),
                   np.array(snap["target_q"], dtype=float),
                   np.array(snap["policy_counts"], dtype=np.int64),
                   Hyperparams(**snap["hyper"]), int(snap["steps"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.snapshot(), fh)

    @classmethod
    def load(cls, path) -> "AlgorithmState":
        with open(path) as fh:
            return cls.from_snapshot(json.load(fh))


def _check_batch(st: AlgorithmState, batch: Batch):
    s, a = batch.states, batch.actions
    if s.size and (s.min() < 0 or s.max() >= st.n_states or batch.next_states.min() < 0
                   or batch.next_states.max() >= st.n_states):
        raise InputError("batch state ids out of range")
    if a.size and (a.min() < 0 or a.max() >= st.n_actions):
        raise InputError("batch action ids out of range")


def _grouped_mean(flat_idx, values, size):
    """Per-entry mean of ``values`` grouped by ``flat_idx`` (zero where absent)."""
    counts = np.bincount(flat_idx, minlength=size)
    sums = np.bincount(flat_idx, weights=values, minlength=size)
    # absent entries have a zero sum, so dividing by max(count, 1) leaves them at zero
    return sums / np.maximum(counts, 1), counts


def _td_delta(st: AlgorithmState, batch: Batch):
    """Return (flat update for Q, per-sample TD errors)."""
    h = st.hyper
    bootstrap = st.target_q[batch.next_states].max(axis=1)
    target = batch.rewards + np.where(batch.dones, 0.0, h.discount * bootstrap)
    flat = batch.states * st.n_actions + batch.actions
    errors = target - st.q.ravel()[flat]
    mean_err, _ = _grouped_mean(flat, errors, st.q.size)
    return h.learning_rate * mean_err.reshape(st.q.shape), errors


def _state_action_freq(st: AlgorithmState, batch: Batch):
    """Per visited state: batch action frequencies; mask of visited states."""
    S, A = st.q.shape
    flat = batch.states * A + batch.actions
    counts = np.bincount(flat, minlength=S * A).reshape(S, A).astype(float)
    per_state = counts.sum(axis=1, keepdims=True)
    visited = per_state[:, 0] > 0
    freq = np.divide(counts, per_state, out=np.zeros_like(counts), where=per_state > 0)
    return freq, visited


def _softmax_rows(q):
    z = q - q.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _finish(st: AlgorithmState):
    st.steps += 1
    if st.steps % st.hyper.target_sync_every == 0:
        st.target_q = st.q.copy()


def bc_train_step(st: AlgorithmState, batch: Batch, check: bool = True) -> float:
    """Count dataset actions; returns the batch negative log-likelihood before the update."""
    if check:
        _check_batch(st, batch)
    rows = st.policy_counts[batch.states]
    totals = rows.sum(axis=1)
    chosen = rows[np.arange(len(rows)), batch.actions]
    probs = np.where(totals > 0, chosen / np.maximum(totals, 1), 1.0 / st.n_actions)
    flat = batch.states * st.n_actions + batch.actions
    st.policy_counts += np.bincount(flat, minlength=st.q.size).reshape(st.q.shape)
    st.steps += 1
    # an action never seen at a visited state has probability 0; clip so the loss stays finite
    return float(-np.mean(np.log(np.maximum(probs, 1e-12)))) if probs.size else 0.0


def ql_train_step(st: AlgorithmState, batch: Batch, check: bool = True) -> float:
    """One TD step; returns the mean absolute TD error of the batch."""
    if check:
        _check_batch(st, batch)
    delta, errors = _td_delta(st, batch)
    st.q = st.q + delta
    _finish(st)
    return float(np.abs(errors).sum()) / errors.size if errors.size else 0.0


def cql_train_step(st: AlgorithmState, batch: Batch, check: bool = True) -> float:
    """TD step plus the conservative penalty gradient.

    For every state row touched by the batch the penalty
    ``logsumexp_a Q(s, a) - Q(s, a_data)`` is descended: the row loses
    ``lr * alpha * softmax(Q(s, .))`` and gains ``lr * alpha`` spread over the
    batch's action frequencies at that state. Returns mean squared TD error
    plus ``alpha`` times the mean penalty.
    """
    if check:
        _check_batch(st, batch)
    h = st.hyper
    delta, errors = _td_delta(st, batch)
    loss = float(errors @ errors) / errors.size if errors.size else 0.0
    if h.cql_alpha > 0.0 and errors.size:
        freq, visited = _state_action_freq(st, batch)
        soft = _softmax_rows(st.q)
        grad = np.where(visited[:, None], freq - soft, 0.0)
        delta = delta + h.learning_rate * h.cql_alpha * grad
        m = st.q.max(axis=1)
        lse = m + np.log(np.exp(st.q - m[:, None]).sum(axis=1))
        penalty = lse[batch.states] - st.q[batch.states, batch.actions]
        loss += h.cql_alpha * float(np.mean(penalty))
    st.q = st.q + delta
    _finish(st)
    return loss


def bcreg_train_step(st: AlgorithmState, batch: Batch, check: bool = True) -> float:
    """TD step plus ``lr * bc_weight`` added to dataset actions (averaged per state)."""
    if check:
        _check_batch(st, batch)
    h = st.hyper
    delta, errors = _td_delta(st, batch)
    loss = float(errors @ errors) / errors.size if errors.size else 0.0
    if h.bc_weight > 0.0 and errors.size:
        freq, _ = _state_action_freq(st, batch)
        delta = delta + h.learning_rate * h.bc_weight * freq
        loss -= h.bc_weight * float(np.mean(st.q[batch.states, batch.actions]))
    st.q = st.q + delta
    _finish(st)
    return loss


TRAIN_STEPS = {
    "bc": bc_train_step,
    "ql": ql_train_step,
    "cql": cql_train_step,
    "bcreg": bcreg_train_step,
}


def train_step(st: AlgorithmState, batch: Batch, check: bool = True) -> float:
    """Dispatch on ``st.algorithm``. ``check=False`` skips the id range check
    for callers whose ids were validated in bulk."""
    return TRAIN_STEPS[st.algorithm](st, batch, check)


def greedy_table(st: AlgorithmState) -> np.ndarray:
    """The table whose row-wise argmax is the eval-mode action."""
    return st.policy_counts.astype(float) if st.algorithm == "bc" else st.q


def policy_of(st: AlgorithmState, mode: str = "eval") -> Policy:
    if mode == "eval":
        return Policy.greedy(greedy_table(st))
    if mode == "explore":
        return Policy.epsilon_greedy(greedy_table(st), st.hyper.epsilon)
    raise InputError(f"unknown mode {mode!r}")


def act(st: AlgorithmState, state: int, mode: str, rng: np.random.Generator) -> int:
    """Eval: argmax (lowest index on ties). Explore: epsilon-greedy around it."""
    if not 0 <= state < st.n_states:
        raise InputError(f"state {state} out of range")
    row = greedy_table(st)[state]
    if mode == "eval":
        return int(np.argmax(row))
    if mode == "explore":
        if st.hyper.epsilon > 0.0 and rng.random() < st.hyper.epsilon:
            return int(rng.integers(st.n_actions))
        return int(np.argmax(row))
    raise InputError(f"unknown mode {mode!r}")
