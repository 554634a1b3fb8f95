"""Tabular MDPs, policies and rollouts.

States are ``0..n_states-1`` and actions ``0..n_actions-1``. Transition
probabilities and rewards are dense arrays of shape ``(S, A, S)``; the reward
is a deterministic function of ``(s, a, s')``. Terminal states absorb: a
rollout stops as soon as it enters one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .errors import InputError

PROB_TOL = 1e-9

# gridworld action ids
UP, RIGHT, DOWN, LEFT = 0, 1, 2, 3
_MOVES = {UP: (-1, 0), RIGHT: (0, 1), DOWN: (1, 0), LEFT: (0, -1)}


@dataclass
class MdpSpec:
    name: str
    transition: np.ndarray
    reward: np.ndarray
    start_distribution: np.ndarray
    terminal_states: frozenset
    horizon: int

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.reward = np.asarray(self.reward, dtype=float)
        self.start_distribution = np.asarray(self.start_distribution, dtype=float)
        self.terminal_states = frozenset(int(s) for s in self.terminal_states)
        self.horizon = int(self.horizon)
        if self.transition.ndim != 3 or self.transition.shape[0] != self.transition.shape[2]:
            raise InputError(f"transition must have shape (S, A, S), got {self.transition.shape}")
        if self.reward.shape != self.transition.shape:
            raise InputError(f"reward shape {self.reward.shape} != transition shape {self.transition.shape}")
        S, A, _ = self.transition.shape
        if self.start_distribution.shape != (S,):
            raise InputError("start_distribution must have one entry per state")
        if self.horizon < 0:
            raise InputError("horizon must be >= 0")
        if np.any(self.transition < 0) or np.any(self.start_distribution < 0):
            raise InputError("probabilities must be non-negative")
        if abs(self.start_distribution.sum() - 1.0) > PROB_TOL:
            raise InputError(f"start_distribution sums to {self.start_distribution.sum()!r}, not 1")
        for s in self.terminal_states:
            if not 0 <= s < S:
                raise InputError(f"terminal state {s} out of range")
        sums = self.transition.sum(axis=2)
        for s in range(S):
            if s in self.terminal_states:
                continue
            bad = np.flatnonzero(np.abs(sums[s] - 1.0) > PROB_TOL)
            if bad.size:
                raise InputError(f"P(.|s={s}, a={int(bad[0])}) sums to {sums[s, bad[0]]!r}, not 1")

        self.is_terminal = np.zeros(S, dtype=bool)
        self.is_terminal[list(self.terminal_states)] = True
        self._cdf = np.cumsum(self.transition, axis=2)
        self._start_cdf = np.cumsum(self.start_distribution)
        # -1 marks a stochastic (s, a) row; otherwise the certain successor
        peak = self.transition.argmax(axis=2)
        certain = np.take_along_axis(self.transition, peak[..., None], axis=2)[..., 0] == 1.0
        self._certain_next = np.where(certain, peak, -1)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def sample_start(self, rng: np.random.Generator) -> int:
        u = rng.random()
        return min(int(np.searchsorted(self._start_cdf, u, side="right")), self.n_states - 1)

    def expected_reward(self) -> np.ndarray:
        """r(s, a) = sum_s' P(s'|s,a) R(s,a,s')."""
        return (self.transition * self.reward).sum(axis=2)


@dataclass(frozen=True)
class Transition:
    state: int
    action: int
    reward: float
    next_state: int
    done: bool
    episode_id: int
    step_index: int


@dataclass
class Episode:
    transitions: list = field(default_factory=list)
    total_return: float = 0.0

    def __len__(self):
        return len(self.transitions)

    @property
    def rewards(self) -> list:
        return [t.reward for t in self.transitions]


class Policy:
    """A tabular policy.

    ``kind`` is one of ``"tabular-stochastic"`` (``table`` holds pi(a|s)),
    ``"greedy-from-Q"`` or ``"epsilon-greedy-from-Q"`` (``table`` holds
    Q(s, a); ties go to the lowest action index).
    """

    KINDS = ("tabular-stochastic", "greedy-from-Q", "epsilon-greedy-from-Q")

    def __init__(self, kind: str, table, epsilon: float = 0.0):
        if kind not in self.KINDS:
            raise InputError(f"unknown policy kind {kind!r}")
        if not 0.0 <= epsilon <= 1.0:
            raise InputError(f"epsilon must lie in [0, 1], got {epsilon}")
        table = np.array(table, dtype=float)
        if table.ndim != 2:
            raise InputError("policy table must be 2-D (states x actions)")
        if kind == "tabular-stochastic":
            if np.any(table < 0) or np.any(np.abs(table.sum(axis=1) - 1.0) > PROB_TOL):
                raise InputError("stochastic policy rows must be distributions")
            self._cdf = np.cumsum(table, axis=1)
        self.kind = kind
        self.table = table
        self.epsilon = float(epsilon)
        self._greedy = table.argmax(axis=1)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls("tabular-stochastic", np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def greedy(cls, q) -> "Policy":
        return cls("greedy-from-Q", q)

    @classmethod
    def epsilon_greedy(cls, q, epsilon: float) -> "Policy":
        return cls("epsilon-greedy-from-Q", q, epsilon)

    @property
    def n_states(self) -> int:
        return self.table.shape[0]

    @property
    def n_actions(self) -> int:
        return self.table.shape[1]

    def probabilities(self) -> np.ndarray:
        """Full pi(a|s) matrix."""
        if self.kind == "tabular-stochastic":
            return self.table.copy()
        onehot = np.zeros_like(self.table)
        onehot[np.arange(self.n_states), self._greedy] = 1.0
        if self.kind == "greedy-from-Q":
            return onehot
        return (1.0 - self.epsilon) * onehot + self.epsilon / self.n_actions

    def act(self, state: int, rng: np.random.Generator) -> int:
        if self.kind == "greedy-from-Q":
            return int(self._greedy[state])
        if self.kind == "epsilon-greedy-from-Q":
            if self.epsilon > 0.0 and rng.random() < self.epsilon:
                return int(rng.integers(self.n_actions))
            return int(self._greedy[state])
        u = rng.random()
        return min(int(np.searchsorted(self._cdf[state], u, side="right")), self.n_actions - 1)


def _check_ids(mdp: MdpSpec, state, action):
    if not 0 <= state < mdp.n_states:
        raise InputError(f"state {state} out of range for {mdp.n_states} states")
    if not 0 <= action < mdp.n_actions:
        raise InputError(f"action {action} out of range for {mdp.n_actions} actions")


def step(mdp: MdpSpec, state: int, action: int, rng: np.random.Generator, step_index=None):
    """Sample one transition. Returns ``(next_state, reward, done)``.

    ``done`` is true when ``next_state`` is terminal, or when ``step_index``
    is given and equals ``horizon - 1``.
    """
    _check_ids(mdp, state, action)
    if mdp.is_terminal[state]:
        raise InputError(f"state {state} is terminal")
    nxt = int(mdp._certain_next[state, action])
    if nxt < 0:
        u = rng.random()
        nxt = min(int(np.searchsorted(mdp._cdf[state, action], u, side="right")), mdp.n_states - 1)
    reward = float(mdp.reward[state, action, nxt])
    done = bool(mdp.is_terminal[nxt]) or (step_index is not None and step_index == mdp.horizon - 1)
    return nxt, reward, done


def rollout(mdp: MdpSpec, policy: Policy, rng: np.random.Generator, episode_id: int = 0) -> Episode:
    if policy.n_states != mdp.n_states or policy.n_actions != mdp.n_actions:
        raise InputError("policy dimensions do not match the MDP")
    episode = Episode()
    if mdp.horizon == 0:
        return episode
    state = mdp.sample_start(rng)
    total = 0.0
    for t in range(mdp.horizon):
        if mdp.is_terminal[state]:
            break
        action = policy.act(state, rng)
        nxt, reward, done = step(mdp, state, action, rng, step_index=t)
        episode.transitions.append(Transition(state, action, reward, nxt, done, episode_id, t))
        total += reward
        state = nxt
        if done:
            break
    episode.total_return = total
    return episode


def discounted_return(rewards: Sequence[float], discount: float) -> float:
    if not 0.0 <= discount <= 1.0:
        raise InputError(f"discount must lie in [0, 1], got {discount}")
    total, weight = 0.0, 1.0
    for r in rewards:
        total += weight * r
        weight *= discount
    return total


def optimal_q(mdp: MdpSpec, discount: float, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """Q* by value iteration; terminal states have value 0."""
    r = mdp.expected_reward()
    live = (~mdp.is_terminal).astype(float)
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iter):
        v = q.max(axis=1) * live
        new = r + discount * mdp.transition @ v
        new[mdp.is_terminal] = 0.0
        if np.max(np.abs(new - q)) < tol:
            return new
        q = new
    return q


def chain_mdp(length: int, step_reward: float = 0.0, goal_reward: float = 1.0,
              slip: float = 0.0, horizon=None, name=None) -> MdpSpec:
    """1-D chain: states ``0..length``, start at 0, terminal goal at ``length``.

    Action 0 moves left (clamped at 0), action 1 moves right. With probability
    ``slip`` the opposite move happens instead. The reward for entering
    ``s'`` is ``step_reward`` plus ``goal_reward`` when ``s'`` is the goal.
    """
    if length < 1:
        raise InputError("chain length must be >= 1")
    S, goal = length + 1, length
    P = np.zeros((S, 2, S))
    for s in range(S):
        if s == goal:
            P[s, :, s] = 1.0
            continue
        left, right = max(s - 1, 0), s + 1
        P[s, 0, left] += 1.0 - slip
        P[s, 0, right] += slip
        P[s, 1, right] += 1.0 - slip
        P[s, 1, left] += slip
    R = np.full((S, 2, S), float(step_reward))
    R[:, :, goal] += goal_reward
    start = np.zeros(S)
    start[0] = 1.0
    return MdpSpec(name or f"chain-{length}", P, R, start, {goal},
                   horizon if horizon is not None else 4 * S)


def gridworld(width: int, height: int, walls=(), start=(0, 0), goal=None,
              slip: float = 0.0, step_reward: float = -1.0, goal_reward: float = 0.0,
              horizon=None, name=None) -> MdpSpec:
    """Grid with 4 moves (up, right, down, left); state id = row * width + col.

    Moving off the grid or into a wall leaves the agent in place. With
    probability ``slip`` the chosen move is replaced by a uniformly random
    one. Wall cells exist as (unreachable) states so ids stay dense.

    ``start`` is one cell, a list of cells, or ``"any"`` (every free
    non-goal cell); episodes start uniformly over them.
    """
    goal = tuple(goal) if goal is not None else (height - 1, width - 1)
    walls = {tuple(w) for w in walls}
    if start == "any":
        starts = [(r, c) for r in range(height) for c in range(width)
                  if (r, c) not in walls and (r, c) != goal]
    elif len(start) and np.ndim(start[0]) == 0:
        starts = [tuple(start)]
    else:
        starts = [tuple(c) for c in start]
    if goal in walls or any(c in walls or c == goal for c in starts):
        raise InputError("start and goal cells cannot be walls, and starts cannot be the goal")
    S = width * height

    def sid(cell):
        return cell[0] * width + cell[1]

    def move(cell, action):
        dr, dc = _MOVES[action]
        r, c = cell[0] + dr, cell[1] + dc
        if not (0 <= r < height and 0 <= c < width) or (r, c) in walls:
            return cell
        return (r, c)

    P = np.zeros((S, 4, S))
    for r in range(height):
        for c in range(width):
            s = sid((r, c))
            if (r, c) == goal or (r, c) in walls:
                P[s, :, s] = 1.0
                continue
            for a in range(4):
                P[s, a, sid(move((r, c), a))] += 1.0 - slip
                for b in range(4):
                    P[s, a, sid(move((r, c), b))] += slip / 4
    R = np.full((S, 4, S), float(step_reward))
    R[:, :, sid(goal)] += goal_reward
    p0 = np.zeros(S)
    for c in starts:
        p0[sid(c)] += 1.0 / len(starts)
    return MdpSpec(name or f"grid-{width}x{height}", P, R, p0, {sid(goal)},
                   horizon if horizon is not None else 4 * S)


def mdp_from_config(cfg: dict) -> MdpSpec:
    """Build an environment from a config mapping (``kind`` selects the factory)."""
    cfg = dict(cfg)
    kind = cfg.pop("kind", "gridworld")
    if kind == "gridworld":
        return gridworld(**cfg)
    if kind == "chain":
        return chain_mdp(**cfg)
    if kind == "file":
        return load_mdp(cfg["path"])
    raise InputError(f"unknown environment kind {kind!r}")


def save_mdp(mdp: MdpSpec, path) -> None:
    """Write ``mdp`` as YAML; transitions are ``[s, a, s', prob, reward]`` rows."""
    rows = []
    for s, a, s2 in zip(*np.nonzero(mdp.transition)):
        rows.append([int(s), int(a), int(s2), float(mdp.transition[s, a, s2]), float(mdp.reward[s, a, s2])])
    doc = {
        "name": mdp.name,
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "horizon": mdp.horizon,
        "start": {int(s): float(p) for s, p in enumerate(mdp.start_distribution) if p > 0},
        "terminal": sorted(mdp.terminal_states),
        "transitions": rows,
    }
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False, default_flow_style=None))


def load_mdp(path) -> MdpSpec:
    doc = yaml.safe_load(Path(path).read_text())
    try:
        S, A = int(doc["n_states"]), int(doc["n_actions"])
        P = np.zeros((S, A, S))
        R = np.zeros((S, A, S))
        for row in doc["transitions"]:
            s, a, s2, p, r = row
            P[int(s), int(a), int(s2)] += float(p)
            R[int(s), int(a), int(s2)] = float(r)
        start = np.zeros(S)
        for s, p in doc["start"].items():
            start[int(s)] = float(p)
        terminal = doc.get("terminal", [])
        for s in terminal:
            if P[int(s)].sum() == 0:
                P[int(s), :, int(s)] = 1.0
        return MdpSpec(doc.get("name", Path(path).stem), P, R, start, terminal, int(doc["horizon"]))
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed MDP file {path}: {exc}") from exc
