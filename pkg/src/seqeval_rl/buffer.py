"""Replay buffer that reveals a fixed offline dataset incrementally.

All offline data is stored up front; a visibility counter bounds which
indices may be sampled. Newly revealed indices are queued as *pending* and
the next batch drawn with ``include_pending=True`` is guaranteed to contain
them. When the queue is longer than a batch, the remainder carries over to
the following batch.
"""

from __future__ import annotations

import numpy as np

from .dataset import Batch, OfflineDataset
from .errors import BufferExhausted, InputError, ProtocolError
from .mdp import Transition


class SequentialBuffer:
    def __init__(self, data: OfflineDataset, t0: int, capacity_online: int = 0):
        n = len(data)
        if not 0 < t0 <= n:
            raise InputError(f"t0 must satisfy 0 < t0 <= {n}, got {t0}")
        self.data = data
        self.n_offline = n
        self.visible = int(t0)
        self.capacity_online = int(capacity_online)
        cap = n + self.capacity_online
        self.states = np.zeros(cap, dtype=np.int64)
        self.actions = np.zeros(cap, dtype=np.int64)
        self.rewards = np.zeros(cap, dtype=np.float64)
        self.next_states = np.zeros(cap, dtype=np.int64)
        self.dones = np.zeros(cap, dtype=bool)
        m = data.meta
        for name, ids, bound in (("state", data.states, m.n_states), ("next state", data.next_states, m.n_states),
                                 ("action", data.actions, m.n_actions)):
            if n and (ids.min() < 0 or ids.max() >= bound):
                raise InputError(f"dataset {name} ids fall outside [0, {bound})")
        self.states[:n] = data.states
        self.actions[:n] = data.actions
        self.rewards[:n] = data.rewards
        self.next_states[:n] = data.next_states
        self.dones[:n] = data.dones
        self.online: list = []
        self.hits = np.zeros(cap, dtype=np.int64)
        # revealed data always extends [0, visible) at the top, so the pending
        # queue is the contiguous range [_pending_lo, visible)
        self._pending_lo = self.visible

    def __len__(self):
        return self.n_offline + len(self.online)

    @property
    def pending_new(self) -> np.ndarray:
        return np.arange(self._pending_lo, self.visible)

    @property
    def has_pending(self) -> bool:
        return self._pending_lo < self.visible

    @property
    def offline_exhausted(self) -> bool:
        return self.visible >= self.n_offline

    def extend(self, gamma: int) -> range:
        """Reveal up to ``gamma`` more offline transitions; returns the new range."""
        if gamma < 1:
            raise InputError("increment must be >= 1")
        if self.offline_exhausted:
            raise BufferExhausted(f"all {self.n_offline} offline transitions are visible")
        lo = self.visible
        hi = min(lo + gamma, self.n_offline)
        self.visible = hi
        return range(lo, hi)

    def sample_batch(self, batch_size: int, include_pending: bool, rng: np.random.Generator):
        """Return ``(indices, Batch)``.

        Indices are distinct within a batch and drawn uniformly from
        ``[0, visible)``; with ``include_pending`` the front of the pending
        queue (up to ``batch_size`` entries) is placed first.
        """
        if batch_size < 1:
            raise InputError("batch_size must be >= 1")
        if self.visible < 1:
            raise InputError("buffer is empty")
        size = min(batch_size, self.visible)
        if include_pending and self._pending_lo < self.visible:
            hi = min(self._pending_lo + size, self.visible)
            forced = np.arange(self._pending_lo, hi)
            self._pending_lo = hi
            need = size - forced.size
            if need:
                draws = rng.choice(self.visible, size=min(size, self.visible), replace=False)
                # the forced block is at most one batch long, so a dense comparison is cheapest
                draws = draws[(draws[:, None] != forced[None, :]).all(axis=1)]
                idx = np.concatenate([forced, draws[:need]])
            else:
                idx = forced
        else:
            idx = rng.choice(self.visible, size=size, replace=False)
        self.hits[idx] += 1  # indices are distinct
        return idx, self.batch(idx)

    def batch(self, idx) -> Batch:
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.dones[idx])

    def append_online(self, tr: Transition) -> None:
        if not self.offline_exhausted:
            raise ProtocolError("online transitions may only be added after the offline data is exhausted")
        i = len(self)
        if i >= self.n_offline + self.capacity_online:
            raise InputError("online capacity exceeded")
        self.states[i], self.actions[i], self.rewards[i] = tr.state, tr.action, tr.reward
        self.next_states[i], self.dones[i] = tr.next_state, tr.done
        self.online.append(tr)
        self.visible = i + 1


def new_buffer(d: OfflineDataset, t0: int, capacity_online: int = 0) -> SequentialBuffer:
    return SequentialBuffer(d, t0, capacity_online)
