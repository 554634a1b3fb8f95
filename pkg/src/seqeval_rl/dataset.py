"""Offline datasets: generation, mixing, per-seed shuffling, persistence.

A dataset is stored column-wise (one numpy array per transition field) and
split into ordered, contiguous *segments*, each labelled with the tier that
produced it. Plain generated datasets have a single segment; mixed datasets
have one per part.

File format (UTF-8 text)::

    # seqeval-dataset v1
    # env_name=<str>
    # tier=<str>
    # random_ref=<float repr>
    # expert_ref=<float repr>
    # dataset_policy_score=<float repr>
    # n_states=<int>
    # n_actions=<int>
    # n_transitions=<int>
    # segment=<label>,<start>,<end>        (one line per segment, in order)
    state,action,reward,next_state,done,episode_id,step_index
    <one record per transition, same field order; done is 0/1>
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DatasetFormatError, DatasetValidationError, DegenerateReference, InputError
from .mdp import MdpSpec, Policy, Transition, optimal_q, rollout

TIERS = ("random", "medium", "medium-replay", "medium-expert", "expert", "mixed")
MAGIC = "# seqeval-dataset v1"
COLUMNS = ("state", "action", "reward", "next_state", "done", "episode_id", "step_index")


@dataclass(frozen=True)
class DatasetMeta:
    env_name: str
    tier: str
    random_ref: float
    expert_ref: float
    dataset_policy_score: float
    n_states: int
    n_actions: int

    def __post_init__(self):
        if self.tier not in TIERS:
            raise InputError(f"unknown tier {self.tier!r}; expected one of {TIERS}")


class Segment(NamedTuple):
    label: str
    start: int
    end: int


class Batch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray


class OfflineDataset:
    """Ordered transitions with episode ids, tier segments and metadata."""

    def __init__(self, states, actions, rewards, next_states, dones, episode_ids, step_indices,
                 segments: Sequence[Segment], meta: DatasetMeta):
        self.states = np.asarray(states, dtype=np.int64)
        self.actions = np.asarray(actions, dtype=np.int64)
        self.rewards = np.asarray(rewards, dtype=np.float64)
        self.next_states = np.asarray(next_states, dtype=np.int64)
        self.dones = np.asarray(dones, dtype=bool)
        self.episode_ids = np.asarray(episode_ids, dtype=np.int64)
        self.step_indices = np.asarray(step_indices, dtype=np.int64)
        self.segments = [Segment(*s) for s in segments]
        self.meta = meta
        n = len(self.states)
        for col in (self.actions, self.rewards, self.next_states, self.dones,
                    self.episode_ids, self.step_indices):
            if len(col) != n:
                raise InputError("dataset columns have different lengths")
        pos = 0
        for seg in self.segments:
            if seg.start != pos or seg.end < seg.start:
                raise InputError(f"segments must partition [0, {n}) contiguously, got {self.segments}")
            pos = seg.end
        if pos != n:
            raise InputError(f"segments cover [0, {pos}) but dataset has {n} transitions")

    def __len__(self):
        return len(self.states)

    def __eq__(self, other):
        if not isinstance(other, OfflineDataset):
            return NotImplemented
        if self.meta != other.meta and not _meta_bits_equal(self.meta, other.meta):
            return False
        if self.segments != other.segments:
            return False
        return all(a.dtype == b.dtype and a.tobytes() == b.tobytes()
                   for a, b in zip(self._columns(), other._columns()))

    def __repr__(self):
        return (f"OfflineDataset(env={self.meta.env_name!r}, tier={self.meta.tier!r}, "
                f"n={len(self)}, segments={[s.label for s in self.segments]})")

    def _columns(self):
        return (self.states, self.actions, self.rewards, self.next_states, self.dones,
                self.episode_ids, self.step_indices)

    @property
    def transitions(self) -> list:
        return [Transition(int(s), int(a), float(r), int(s2), bool(d), int(e), int(k))
                for s, a, r, s2, d, e, k in zip(*self._columns())]

    def batch(self, indices) -> Batch:
        idx = np.asarray(indices)
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.dones[idx])

    def take(self, order, segments=None, meta=None) -> "OfflineDataset":
        order = np.asarray(order, dtype=np.int64)
        cols = [c[order] for c in self._columns()]
        if segments is None:
            segments = [Segment(self.meta.tier, 0, len(order))]
        return OfflineDataset(*cols, segments=segments, meta=meta or self.meta)

    def episode_starts(self) -> np.ndarray:
        """Indices at which a new episode begins (always includes 0 when non-empty)."""
        if len(self) == 0:
            return np.zeros(0, dtype=np.int64)
        change = np.flatnonzero(np.diff(self.episode_ids) != 0) + 1
        return np.concatenate([[0], change])

    def complete_episode_returns(self) -> np.ndarray:
        """Returns of episodes whose final transition has ``done`` set."""
        starts = self.episode_starts()
        ends = np.append(starts[1:], len(self))
        out = [self.rewards[a:b].sum() for a, b in zip(starts, ends) if self.dones[b - 1]]
        return np.asarray(out, dtype=float)


def _meta_bits_equal(a: DatasetMeta, b: DatasetMeta) -> bool:
    # nan scores compare unequal; fall back to exact bit patterns
    for f in ("random_ref", "expert_ref", "dataset_policy_score"):
        if np.float64(getattr(a, f)).tobytes() != np.float64(getattr(b, f)).tobytes():
            return False
    return replace(a, random_ref=0.0, expert_ref=0.0, dataset_policy_score=0.0) == replace(
        b, random_ref=0.0, expert_ref=0.0, dataset_policy_score=0.0)


def _mean_or_nan(values) -> float:
    return float(np.mean(values)) if len(values) else math.nan


def reference_scores(mdp: MdpSpec, discount: float = 0.99, n_episodes: int = 1000, seed: int = 0):
    """Monte Carlo mean returns of the uniform policy and the optimal greedy policy."""
    rng = np.random.default_rng(seed)
    uniform = Policy.uniform(mdp.n_states, mdp.n_actions)
    expert = Policy.greedy(optimal_q(mdp, discount))
    random_ref = float(np.mean([rollout(mdp, uniform, rng).total_return for _ in range(n_episodes)]))
    expert_ref = float(np.mean([rollout(mdp, expert, rng).total_return for _ in range(n_episodes)]))
    if not expert_ref > random_ref:
        raise DegenerateReference(f"expert_ref {expert_ref} must exceed random_ref {random_ref}")
    return random_ref, expert_ref


def from_episodes(episodes, mdp: MdpSpec, tier: str, refs, n_transitions=None) -> OfflineDataset:
    """Concatenate episodes (renumbering ids from 0) and cut to ``n_transitions``."""
    rows = []
    complete = []
    for eid, ep in enumerate(episodes):
        if n_transitions is not None and len(rows) >= n_transitions:
            break
        for t in ep.transitions:
            rows.append((t.state, t.action, t.reward, t.next_state, t.done, eid, t.step_index))
        if n_transitions is None or len(rows) <= n_transitions:
            complete.append(ep.total_return)
    if n_transitions is not None:
        rows = rows[:n_transitions]
    cols = list(zip(*rows)) if rows else [[]] * 7
    meta = DatasetMeta(mdp.name, tier, float(refs[0]), float(refs[1]), _mean_or_nan(complete),
                       mdp.n_states, mdp.n_actions)
    return OfflineDataset(*cols, segments=[Segment(tier, 0, len(rows))], meta=meta)


def generate_dataset(mdp: MdpSpec, policy: Policy, n_transitions: int, rng: np.random.Generator,
                     tier: str = "random", refs=None) -> OfflineDataset:
    """Roll out ``policy`` until at least ``n_transitions`` are collected, then cut.

    ``dataset_policy_score`` is the mean return over episodes that made it
    into the dataset uncut. ``refs`` is ``(random_ref, expert_ref)``; it is
    computed with :func:`reference_scores` when omitted.
    """
    if n_transitions <= 0:
        raise InputError("n_transitions must be > 0")
    if policy.n_states != mdp.n_states or policy.n_actions != mdp.n_actions:
        raise InputError(f"policy is {policy.n_states}x{policy.n_actions}, "
                         f"MDP is {mdp.n_states}x{mdp.n_actions}")
    if mdp.horizon == 0:
        raise InputError("cannot collect data with horizon 0")
    if refs is None:
        refs = reference_scores(mdp)
    episodes, count = [], 0
    while count < n_transitions:
        ep = rollout(mdp, policy, rng, episode_id=len(episodes))
        if not ep.transitions:
            raise InputError("rollout produced an empty episode; check start/terminal states")
        episodes.append(ep)
        count += len(ep)
    return from_episodes(episodes, mdp, tier, refs, n_transitions)


def _check_compatible(parts: Sequence[OfflineDataset]):
    first = parts[0].meta
    for p in parts[1:]:
        m = p.meta
        if m.env_name != first.env_name:
            raise InputError(f"cannot mix datasets from {first.env_name!r} and {m.env_name!r}")
        if (m.n_states, m.n_actions) != (first.n_states, first.n_actions):
            raise InputError("cannot mix datasets with different state/action spaces")


def make_mixed(parts: Sequence[OfflineDataset], proportions: Sequence[float], total=None,
               tier: str = "mixed") -> OfflineDataset:
    """Concatenate a prefix of each part, in order.

    The target total defaults to the largest size every part can supply,
    ``min(len_i / p_i)``. Each prefix ends at the episode boundary nearest to
    ``p_i * total``. Segments are labelled with the parts' tiers.
    """
    if len(parts) == 0 or len(parts) != len(proportions):
        raise InputError("need one proportion per part")
    if abs(sum(proportions) - 1.0) > 1e-9 or any(p <= 0 for p in proportions):
        raise InputError(f"proportions must be positive and sum to 1, got {proportions}")
    _check_compatible(parts)
    if total is None:
        total = min(len(d) / p for d, p in zip(parts, proportions))

    chunks, segments, pos, next_eid = [], [], 0, 0
    for d, p in zip(parts, proportions):
        bounds = np.append(d.episode_starts(), len(d))
        target = min(p * total, len(d))
        cut = int(bounds[np.argmin(np.abs(bounds - target))])
        sub = d.take(np.arange(cut))
        # renumber episode ids so they keep increasing across parts
        if cut:
            _, eids = np.unique(sub.episode_ids, return_inverse=True)
            sub.episode_ids = eids.astype(np.int64) + next_eid
            next_eid = int(sub.episode_ids.max()) + 1
        chunks.append(sub)
        segments.append(Segment(d.meta.tier, pos, pos + cut))
        pos += cut

    cols = [np.concatenate([c._columns()[i] for c in chunks]) for i in range(7)]
    m0 = parts[0].meta
    out = OfflineDataset(*cols, segments=segments,
                         meta=DatasetMeta(m0.env_name, tier, m0.random_ref, m0.expert_ref, math.nan,
                                          m0.n_states, m0.n_actions))
    out.meta = replace(out.meta, dataset_policy_score=_mean_or_nan(out.complete_episode_returns()))
    return out


def shuffle_dataset(d: OfflineDataset, seed) -> OfflineDataset:
    """Permute whole episodes within each segment; segment bounds are kept."""
    rng = np.random.default_rng(seed)
    starts = d.episode_starts()
    order = []
    for seg in d.segments:
        # episode blocks inside this segment (segments always start on a boundary)
        inside = starts[(starts >= seg.start) & (starts < seg.end)]
        if inside.size == 0 or inside[0] != seg.start:
            inside = np.concatenate([[seg.start], inside])
        ends = np.append(inside[1:], seg.end)
        for k in rng.permutation(len(inside)):
            order.append(np.arange(inside[k], ends[k]))
    order = np.concatenate(order) if order else np.zeros(0, dtype=np.int64)
    return d.take(order, segments=d.segments, meta=d.meta)


def normalize_score(raw: float, meta: DatasetMeta) -> float:
    span = meta.expert_ref - meta.random_ref
    if span == 0:
        raise DegenerateReference("expert_ref equals random_ref; scores cannot be normalized")
    return 100.0 * (raw - meta.random_ref) / span


# -- persistence ------------------------------------------------------------

def save_dataset(d: OfflineDataset, path) -> None:
    m = d.meta
    lines = [
        MAGIC,
        f"# env_name={m.env_name}",
        f"# tier={m.tier}",
        f"# random_ref={m.random_ref!r}",
        f"# expert_ref={m.expert_ref!r}",
        f"# dataset_policy_score={m.dataset_policy_score!r}",
        f"# n_states={m.n_states}",
        f"# n_actions={m.n_actions}",
        f"# n_transitions={len(d)}",
    ]
    lines += [f"# segment={s.label},{s.start},{s.end}" for s in d.segments]
    lines.append(",".join(COLUMNS))
    for s, a, r, s2, done, e, k in zip(*d._columns()):
        lines.append(f"{s},{a},{float(r)!r},{s2},{int(done)},{e},{k}")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


def load_dataset(path) -> OfflineDataset:
    text = Path(path).read_text()
    lines = text.split("\n")
    if not text.endswith("\n"):
        raise DatasetFormatError(f"{path}: file does not end with a newline (truncated?)",
                                 record=None)
    lines = lines[:-1]
    if not lines or lines[0] != MAGIC:
        raise DatasetFormatError(f"{path}: missing header line {MAGIC!r}")
    header, segments, i = {}, [], 1
    while i < len(lines) and lines[i].startswith("# "):
        key, sep, value = lines[i][2:].partition("=")
        if not sep:
            raise DatasetFormatError(f"{path}: bad header line {i + 1}: {lines[i]!r}")
        if key == "segment":
            label, start, end = value.rsplit(",", 2)
            segments.append(Segment(label, int(start), int(end)))
        else:
            header[key] = value
        i += 1
    try:
        meta = DatasetMeta(header["env_name"], header["tier"], float(header["random_ref"]),
                           float(header["expert_ref"]), float(header["dataset_policy_score"]),
                           int(header["n_states"]), int(header["n_actions"]))
        n = int(header["n_transitions"])
    except (KeyError, ValueError) as exc:
        raise DatasetFormatError(f"{path}: incomplete header ({exc})") from exc
    if i >= len(lines) or lines[i] != ",".join(COLUMNS):
        raise DatasetFormatError(f"{path}: missing column line after header")
    records = lines[i + 1:]
    cols = [np.empty(n, dtype=np.int64), np.empty(n, dtype=np.int64), np.empty(n, dtype=np.float64),
            np.empty(n, dtype=np.int64), np.empty(n, dtype=bool), np.empty(n, dtype=np.int64),
            np.empty(n, dtype=np.int64)]
    for j, line in enumerate(records):
        if j >= n:
            raise DatasetFormatError(f"{path}: more records than n_transitions={n}", record=j)
        fields = line.split(",")
        if len(fields) != 7:
            raise DatasetFormatError(f"{path}: record {j} has {len(fields)} fields, expected 7", record=j)
        try:
            s, a, s2, e, k = (int(fields[x]) for x in (0, 1, 3, 5, 6))
            r = float(fields[2])
            done = {"0": False, "1": True}[fields[4]]
        except (ValueError, KeyError) as exc:
            raise DatasetFormatError(f"{path}: record {j} is malformed: {line!r}", record=j) from exc
        if not (0 <= s < meta.n_states and 0 <= s2 < meta.n_states):
            raise DatasetValidationError(
                f"{path}: record {j} references a state outside [0, {meta.n_states})", record=j)
        if not 0 <= a < meta.n_actions:
            raise DatasetValidationError(
                f"{path}: record {j} references an action outside [0, {meta.n_actions})", record=j)
        cols[0][j], cols[1][j], cols[2][j], cols[3][j] = s, a, r, s2
        cols[4][j], cols[5][j], cols[6][j] = done, e, k
    if len(records) != n:
        raise DatasetFormatError(f"{path}: expected {n} records, found {len(records)} (truncated?)",
                                 record=len(records))
    try:
        return OfflineDataset(*cols, segments=segments, meta=meta)
    except InputError as exc:
        raise DatasetValidationError(f"{path}: {exc}") from exc
