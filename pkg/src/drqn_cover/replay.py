"""Proportional prioritized experience replay backed by a sum-tree."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IndexOutOfRangeError, InsufficientSamplesError
from .state_codec import StateTensor

PRIORITY_FLOOR = 1e-6


class SumTree:
    """Binary tree over ``capacity`` leaves where each node stores the sum of its children.

    Nodes live in a flat array; node ``i`` has children ``2i`` and ``2i+1``
    and the leaves occupy ``[size, 2*size)`` where ``size`` is ``capacity``
    rounded up to a power of two.  Parents are recomputed from their children
    rather than patched by deltas, so the root never drifts from the leaf sum.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        size = 1
        while size < capacity:
            size *= 2
        self._size = size
        self._nodes = np.zeros(2 * size, dtype=np.float64)

    @property
    def total(self) -> float:
        return float(self._nodes[1])

    def __getitem__(self, idx):
        return self._nodes[self._size + np.asarray(idx)]

    @property
    def leaves(self) -> np.ndarray:
        return self._nodes[self._size:self._size + self.capacity]

    def update(self, indices, values):
        nodes = self._nodes
        if np.ndim(indices) == 0:
            i = int(indices)
            if not 0 <= i < self.capacity:
                raise IndexOutOfRangeError(f"leaf index {i} out of range [0, {self.capacity})")
            pos = i + self._size
            nodes[pos] = float(values)
            pos //= 2
            while pos >= 1:
                nodes[pos] = nodes[2 * pos] + nodes[2 * pos + 1]
                pos //= 2
            return
        indices = np.asarray(indices, dtype=np.int64)
        values = np.broadcast_to(np.asarray(values, dtype=np.float64), indices.shape)
        if indices.size == 0:
            return
        if indices.min() < 0 or indices.max() >= self.capacity:
            raise IndexOutOfRangeError(f"leaf index out of range [0, {self.capacity})")
        pos = indices + self._size
        nodes[pos] = values
        # All leaves share one depth, so each pass touches a single tree level.
        # Repeated parents are harmless: every write stores the same sum.
        pos = pos // 2
        while pos[0] >= 1:
            nodes[pos] = nodes[2 * pos] + nodes[2 * pos + 1]
            pos //= 2

    def find(self, mass) -> np.ndarray:
        """Leaf indices whose cumulative-sum interval contains each value of ``mass``."""
        mass = np.array(mass, dtype=np.float64, ndmin=1)
        nodes = self._nodes
        idx = np.ones(mass.shape, dtype=np.int64)
        while idx[0] < self._size:
            left = 2 * idx
            left_sum = nodes[left]
            go_right = mass >= left_sum
            mass = np.where(go_right, mass - left_sum, mass)
            idx = np.where(go_right, left + 1, left)
        return idx - self._size


@dataclass
class Transition:
    state: StateTensor
    action: int
    reward: float
    next_state: StateTensor
    next_mask: np.ndarray
    done: bool
    episode_step: int = 0  # moves taken in the episode before ``state``


@dataclass
class Batch:
    states: np.ndarray
    budgets: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    next_budgets: np.ndarray
    next_masks: np.ndarray
    dones: np.ndarray

    def __len__(self):
        return len(self.actions)


class PriorityBuffer:
    """Ring buffer of transitions sampled in proportion to ``priority ** alpha``.

    Priorities are stored pre-exponent; the tree holds ``priority ** alpha``.
    Observations are kept as uint8 arrays allocated on the first push.
    """

    def __init__(self, capacity=50_000, alpha=0.6, rng=None):
        self.capacity = capacity
        self.alpha = alpha
        self.tree = SumTree(capacity)
        self.priorities = np.zeros(capacity, dtype=np.float64)
        self.max_priority = 1.0
        self.size = 0
        self._next = 0
        self._rng = np.random.default_rng() if rng is None else rng
        self._arrays = None

    def __len__(self):
        return self.size

    def _allocate(self, shape):
        n = self.capacity
        self._arrays = {
            "states": np.zeros((n, *shape), dtype=np.uint8),
            "budgets": np.zeros(n, dtype=np.float64),
            "actions": np.zeros(n, dtype=np.int64),
            "rewards": np.zeros(n, dtype=np.float64),
            "next_states": np.zeros((n, *shape), dtype=np.uint8),
            "next_budgets": np.zeros(n, dtype=np.float64),
            "next_masks": np.zeros((n, 4), dtype=bool),
            "dones": np.zeros(n, dtype=bool),
        }
        self._steps = np.zeros(n, dtype=np.int64)

    def push(self, t: Transition):
        if self._arrays is None:
            self._allocate(t.state.channels.shape)
        i = self._next
        a = self._arrays
        a["states"][i] = t.state.channels
        a["budgets"][i] = t.state.budget_scalar
        a["actions"][i] = t.action
        a["rewards"][i] = t.reward
        a["next_states"][i] = t.next_state.channels
        a["next_budgets"][i] = t.next_state.budget_scalar
        a["next_masks"][i] = t.next_mask
        a["dones"][i] = t.done
        self._steps[i] = t.episode_step
        self.priorities[i] = self.max_priority
        self.tree.update(i, self.max_priority ** self.alpha)
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def get(self, indices) -> Batch:
        a = self._arrays
        idx = np.asarray(indices)
        return Batch(**{k: v[idx] for k, v in a.items()})

    def history(self, indices, length: int):
        """Observations preceding each index within its episode, oldest first.

        Returns ``(states (L, m, ...), budgets (L, m), valid (L, m))``; ``valid``
        is False where the earlier slot belongs to another episode or has been
        overwritten by the ring.
        """
        idx = np.asarray(indices, dtype=np.int64)
        offsets = np.arange(length, 0, -1)[:, None]
        slots = (idx[None, :] - offsets) % self.capacity
        age = (self._next - 1 - idx) % self.capacity
        valid = (self._steps[idx][None, :] >= offsets) & (age[None, :] + offsets < self.size)
        a = self._arrays
        return a["states"][slots], a["budgets"][slots], valid

    def probabilities(self) -> np.ndarray:
        """Sampling probability of every stored slot (length ``size``)."""
        leaves = self.tree.leaves[:self.size]
        return leaves / leaves.sum()

    def sample_indices(self, m: int) -> np.ndarray:
        """Stratified proportional draw: one index per equal-mass segment."""
        if self.size < m or m < 1:
            raise InsufficientSamplesError(f"buffer holds {self.size} transitions, need {m}")
        total = self.tree.total
        segment = total / m
        mass = (np.arange(m) + self._rng.random(m)) * segment
        return np.minimum(self.tree.find(mass), self.size - 1)

    def sample(self, m=64, beta=0.4):
        """Returns ``(batch, indices, importance_weights)``."""
        indices = self.sample_indices(m)
        probs = self.tree[indices] / self.tree.total
        weights = (self.size * probs) ** (-beta)
        weights /= weights.max()
        return self.get(indices), indices, weights

    def update_priorities(self, indices, td_errors):
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= self.size):
            raise IndexOutOfRangeError(f"priority index out of range [0, {self.size})")
        prio = np.abs(np.asarray(td_errors, dtype=np.float64)) + PRIORITY_FLOOR
        self.priorities[indices] = prio
        self.tree.update(indices, prio ** self.alpha)
        self.max_priority = max(self.max_priority, float(prio.max(initial=0.0)))


def beta_schedule(episode: int, episodes: int, beta_start=0.4, beta_end=1.0) -> float:
    """Linear importance-sampling exponent annealing over training episodes."""
    if episodes <= 1:
        return beta_end
    frac = min(max(episode / (episodes - 1), 0.0), 1.0)
    return beta_start + frac * (beta_end - beta_start)
