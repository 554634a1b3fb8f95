"""Sequential evaluation runs.

``run_seqeval`` reveals the (per-seed shuffled) dataset through a
:class:`SequentialBuffer`: each iteration extends the buffer by
``gamma_increment`` transitions, takes one training step on a batch that
contains the newly revealed data, then ``k_steps`` plain steps. The learner
is evaluated whenever the visibility counter crosses a multiple of
``eval_every``, plus once at the end of the offline data. With
``online_steps > 0`` the run continues with environment interaction
(:func:`run_finetune_phase`) on the same evaluation grid.

``run_minibatch`` is the conventional baseline: the whole dataset is
visible from the first step and the x-axis is gradient steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from .algorithms import ALGORITHMS, AlgorithmState, Hyperparams, act, policy_of, train_step
from .buffer import SequentialBuffer, new_buffer
from .dataset import OfflineDataset, normalize_score, shuffle_dataset
from .errors import ConfigError, InputError, ProtocolError
from .evaluation import evaluate_policy, fqe_score
from .mdp import MdpSpec, Transition, step

METRICS = ("return", "fqe")
OFFLINE, ONLINE = "offline", "online"


def default_t0(n: int) -> int:
    base = 500 if n <= 100_000 else 5000
    return max(1, min(base, n // 10))


def default_eval_every(n: int) -> int:
    return max(1, n // 100)


def increment_and_k(rr: float):
    """Smallest (gamma_increment, k_steps) with k / gamma == rr."""
    frac = Fraction(rr).limit_denominator(1000)
    if frac <= 0:
        raise ConfigError(f"replay ratio must be > 0, got {rr}")
    return frac.denominator, frac.numerator


@dataclass
class RunConfig:
    mdp: MdpSpec
    dataset: OfflineDataset
    algorithm: str = "cql"
    hyper: Hyperparams = field(default_factory=Hyperparams)
    t0: Optional[int] = None
    gamma_increment: int = 1
    k_steps: int = 1
    eval_every: Optional[int] = None
    eval_episodes: int = 10
    online_steps: int = 0
    seed: int = 0
    shuffle: bool = True
    metric: str = "return"
    fqe_iterations: int = 1000
    run_id: str = ""

    def __post_init__(self):
        n = len(self.dataset)
        if self.t0 is None:
            self.t0 = default_t0(n)
        if self.eval_every is None:
            self.eval_every = default_eval_every(n)
        self.validate()

    @property
    def replay_ratio(self) -> float:
        return self.k_steps / self.gamma_increment

    def validate(self):
        n = len(self.dataset)
        problems = []
        if self.algorithm not in ALGORITHMS:
            problems.append(f"unknown algorithm {self.algorithm!r}")
        if self.gamma_increment < 1:
            problems.append("gamma_increment must be >= 1")
        if self.k_steps < 0:
            problems.append("k_steps must be >= 0")
        if self.eval_every < 1:
            problems.append("eval_every must be >= 1")
        if self.eval_episodes < 1:
            problems.append("eval_episodes must be >= 1")
        if self.online_steps < 0:
            problems.append("online_steps must be >= 0")
        if not 0 < self.t0 <= n:
            problems.append(f"t0 must satisfy 0 < t0 <= |D| = {n}, got {self.t0}")
        if self.metric not in METRICS:
            problems.append(f"unknown metric {self.metric!r}")
        # new data must fit in the batches of one iteration or it is never trained on
        if self.gamma_increment > self.hyper.batch_size * (1 + max(self.k_steps, 0)):
            problems.append(f"gamma_increment {self.gamma_increment} exceeds batch_size * (1 + K) = "
                            f"{self.hyper.batch_size * (1 + self.k_steps)}; revealed data would go untrained")
        if (self.dataset.meta.n_states, self.dataset.meta.n_actions) != (self.mdp.n_states, self.mdp.n_actions):
            problems.append("dataset and MDP dimensions differ")
        if problems:
            raise ConfigError("; ".join(problems))

    def describe(self) -> dict:
        """Plain-data view of the resolved config (for output headers)."""
        return {
            "run_id": self.run_id,
            "env": self.mdp.name,
            "dataset_tier": self.dataset.meta.tier,
            "dataset_size": len(self.dataset),
            "algorithm": self.algorithm,
            "hyper": vars(self.hyper).copy(),
            "t0": self.t0,
            "gamma_increment": self.gamma_increment,
            "k_steps": self.k_steps,
            "replay_ratio": self.replay_ratio,
            "eval_every": self.eval_every,
            "eval_episodes": self.eval_episodes,
            "online_steps": self.online_steps,
            "seed": self.seed,
            "shuffle": self.shuffle,
            "metric": self.metric,
            "fqe_iterations": self.fqe_iterations,
        }


@dataclass(frozen=True)
class EvalPoint:
    data_count: int
    grad_steps: int
    raw_score: float
    norm_score: float
    phase: str = OFFLINE


@dataclass
class LearningCurve:
    run_id: str
    seed: int
    points: list = field(default_factory=list)
    dataset_size: int = 0
    segments: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    hits: Optional[np.ndarray] = None  # per-buffer-index count of batches that used it

    def __len__(self):
        return len(self.points)

    @property
    def offline_points(self) -> list:
        return [p for p in self.points if p.phase == OFFLINE]

    @property
    def online_points(self) -> list:
        return [p for p in self.points if p.phase == ONLINE]


class _Run:
    """Mutable state shared by the phases of one run."""

    def __init__(self, cfg: RunConfig, on_point: Optional[Callable] = None, state=None):
        self.cfg = cfg
        sample_seq, eval_seq, env_seq = np.random.SeedSequence(cfg.seed).spawn(3)
        self.sample_rng = np.random.default_rng(sample_seq)
        self.eval_rng = np.random.default_rng(eval_seq)
        self.env_rng = np.random.default_rng(env_seq)
        self.data = shuffle_dataset(cfg.dataset, cfg.seed) if cfg.shuffle else cfg.dataset
        self.state = state or AlgorithmState.create(cfg.algorithm, cfg.mdp.n_states,
                                                    cfg.mdp.n_actions, cfg.hyper)
        self.on_point = on_point
        self.curve = LearningCurve(cfg.run_id, cfg.seed, dataset_size=len(self.data),
                                   segments=list(self.data.segments))
        self.grad_steps = 0
        self.ensure_steps = 0
        self.replay_steps = 0

    def train(self, buffer: SequentialBuffer, ensure_new: bool):
        # plain steps still take leftover pending data (carry-over from a large increment)
        include = ensure_new or buffer.has_pending
        _, batch = buffer.sample_batch(self.cfg.hyper.batch_size, include, self.sample_rng)
        # the buffer range-checked every id when it was built
        train_step(self.state, batch, check=False)
        self.grad_steps += 1
        if ensure_new:
            self.ensure_steps += 1
        else:
            self.replay_steps += 1

    def iteration(self, buffer: SequentialBuffer):
        self.train(buffer, ensure_new=True)
        for _ in range(self.cfg.k_steps):
            self.train(buffer, ensure_new=False)

    def score(self) -> float:
        cfg = self.cfg
        policy = policy_of(self.state, "eval")
        if cfg.metric == "fqe":
            return fqe_score(cfg.dataset, policy, cfg.hyper.discount, cfg.fqe_iterations,
                             start_distribution=cfg.mdp.start_distribution)
        mean, _ = evaluate_policy(cfg.mdp, policy, cfg.eval_episodes, self.eval_rng)
        return mean

    def evaluate(self, data_count: int, phase: str) -> EvalPoint:
        raw = self.score()
        point = EvalPoint(int(data_count), self.grad_steps, raw,
                          normalize_score(raw, self.data.meta), phase)
        self.curve.points.append(point)
        if self.on_point is not None:
            self.on_point(point)
        return point

    def evaluate_if_new(self, data_count: int, phase: str):
        pts = self.curve.points
        if pts and pts[-1].data_count == data_count and pts[-1].grad_steps == self.grad_steps:
            return None
        return self.evaluate(data_count, phase)

    def crossed(self, before: int, after: int) -> bool:
        f = self.cfg.eval_every
        return after // f > before // f

    def finish(self, buffer: SequentialBuffer, t0: int) -> LearningCurve:
        n = buffer.n_offline
        self.curve.stats = {
            "grad_steps": self.grad_steps,
            "ensure_steps": self.ensure_steps,
            "replay_steps": self.replay_steps,
            "revealed": n - t0,
            "replay_ratio_measured": self.replay_steps_offline / (n - t0) if n > t0 else math.nan,
            "grad_steps_offline": self.grad_steps_offline,
            "untrained_offline": int(np.count_nonzero(buffer.hits[:n] == 0)),
            "min_hits_offline": int(buffer.hits[:n].min()) if n else 0,
        }
        self.curve.hits = buffer.hits[: len(buffer)].copy()
        return self.curve


def _offline_loop(run: _Run, buffer: SequentialBuffer):
    cfg = run.cfg
    while not buffer.offline_exhausted:
        before = buffer.visible
        buffer.extend(cfg.gamma_increment)
        run.iteration(buffer)
        if run.crossed(before, buffer.visible):
            run.evaluate(buffer.visible, OFFLINE)
    run.evaluate_if_new(buffer.visible, OFFLINE)
    run.grad_steps_offline = run.grad_steps
    run.replay_steps_offline = run.replay_steps


def run_seqeval(cfg: RunConfig, on_point: Optional[Callable] = None) -> LearningCurve:
    """Train ``cfg.algorithm`` while revealing the dataset; returns the learning curve."""
    cfg.validate()
    run = _Run(cfg, on_point)
    buffer = new_buffer(run.data, cfg.t0, capacity_online=cfg.online_steps)
    _offline_loop(run, buffer)
    if cfg.online_steps > 0:
        run_finetune_phase(cfg, run.state, buffer, run=run)
    return run.finish(buffer, cfg.t0)


def run_finetune_phase(cfg: RunConfig, state: AlgorithmState, buffer: SequentialBuffer,
                       run: Optional[_Run] = None) -> list:
    """Interact with ``cfg.mdp`` for ``cfg.online_steps`` steps after the offline data.

    Each environment step (epsilon-greedy on the learner) is appended to the
    buffer and trained on immediately, followed by ``k_steps`` plain steps.
    Returns the evaluation points added, all tagged ``online``.
    """
    if not buffer.offline_exhausted:
        raise ProtocolError("fine-tuning starts only after the offline data is exhausted")
    if run is None:
        run = _Run(cfg, state=state)
        run.data = buffer.data
        run.grad_steps_offline = run.replay_steps_offline = 0
    added_from = len(run.curve.points)
    mdp = cfg.mdp
    rng = run.env_rng
    episode_id = int(buffer.data.episode_ids.max()) + 1 if len(buffer.data) else 0
    current, t = None, 0
    for _ in range(cfg.online_steps):
        if current is None:
            current, t = mdp.sample_start(rng), 0
        action = act(state, current, "explore", rng)
        nxt, reward, done = step(mdp, current, action, rng, step_index=t)
        before = buffer.visible
        buffer.append_online(Transition(current, action, reward, nxt, done, episode_id, t))
        run.iteration(buffer)
        if run.crossed(before, buffer.visible):
            run.evaluate(buffer.visible, ONLINE)
        if done or mdp.is_terminal[nxt]:
            current, episode_id = None, episode_id + 1
        else:
            current, t = nxt, t + 1
    if cfg.online_steps > 0:
        run.evaluate_if_new(buffer.visible, ONLINE)
    return run.curve.points[added_from:]


def run_minibatch(cfg: RunConfig, total_grad_steps: int, on_point: Optional[Callable] = None) -> LearningCurve:
    """Conventional training with the whole dataset visible; evaluates every ``eval_every`` steps."""
    cfg.validate()
    if total_grad_steps < 0:
        raise InputError("total_grad_steps must be >= 0")
    run = _Run(cfg, on_point)
    n = len(run.data)
    buffer = new_buffer(run.data, n)
    for _ in range(total_grad_steps):
        run.train(buffer, ensure_new=False)
        if run.grad_steps % cfg.eval_every == 0:
            run.evaluate(n, OFFLINE)
    run.evaluate_if_new(n, OFFLINE)
    run.grad_steps_offline = run.grad_steps
    run.replay_steps_offline = run.replay_steps
    return run.finish(buffer, n)
