"""Fixed-capacity experience replay with uniform sampling."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import StateError, ValidationError

DEFAULT_CAPACITY = 100_000


@dataclass(eq=False)
class Experience:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Experience):
            return NotImplemented
        return (
            self.action == other.action
            and self.reward == other.reward
            and self.terminal == other.terminal
            and np.array_equal(self.state, other.state)
            and np.array_equal(self.next_state, other.next_state)
        )

    def to_dict(self) -> dict:
        return {
            "state": np.asarray(self.state).tolist(),
            "action": int(self.action),
            "reward": float(self.reward),
            "next_state": np.asarray(self.next_state).tolist(),
            "terminal": bool(self.terminal),
        }


class Batch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray


class ReplayBuffer:
    """Ring buffer of transitions; the oldest entry is overwritten when full.

    Storage is column-wise numpy arrays allocated on the first push, when the
    state length becomes known.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY, n_actions: int = 3):
        if capacity < 1:
            raise ValidationError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.n_actions = n_actions
        self.write_cursor = 0
        self.size = 0
        self.state_dim: int | None = None
        self._states = self._next_states = None
        self._actions = np.zeros(self.capacity, dtype=np.int64)
        self._rewards = np.zeros(self.capacity)
        self._terminals = np.zeros(self.capacity, dtype=bool)

    def __len__(self) -> int:
        return self.size

    def _validate(self, e: Experience) -> tuple[np.ndarray, np.ndarray]:
        s = np.asarray(e.state, dtype=float)
        s2 = np.asarray(e.next_state, dtype=float)
        if s.ndim != 1 or s.shape != s2.shape:
            raise ValidationError("state and next_state must be equal-length vectors")
        if self.state_dim is not None and s.shape[0] != self.state_dim:
            raise ValidationError(f"state length {s.shape[0]} != buffer state length {self.state_dim}")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(s2)) and np.isfinite(e.reward)):
            raise ValidationError("experience has non-finite values")
        if not 0 <= int(e.action) < self.n_actions:
            raise ValidationError(f"action {e.action} outside 0..{self.n_actions - 1}")
        return s, s2

    def push(self, e: Experience) -> "ReplayBuffer":
        s, s2 = self._validate(e)
        if self.state_dim is None:
            self.state_dim = s.shape[0]
            self._states = np.zeros((self.capacity, self.state_dim))
            self._next_states = np.zeros((self.capacity, self.state_dim))
        i = self.write_cursor
        self._states[i] = s
        self._next_states[i] = s2
        self._actions[i] = int(e.action)
        self._rewards[i] = float(e.reward)
        self._terminals[i] = bool(e.terminal)
        self.write_cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return self

    def __getitem__(self, i: int) -> Experience:
        """Stored slot ``i`` (physical index, not insertion order)."""
        if not 0 <= i < self.size:
            raise IndexError(i)
        return Experience(
            self._states[i].copy(),
            int(self._actions[i]),
            float(self._rewards[i]),
            self._next_states[i].copy(),
            bool(self._terminals[i]),
        )

    def contents(self) -> list[Experience]:
        """Stored experiences, oldest first."""
        start = self.write_cursor if self.size == self.capacity else 0
        return [self[(start + k) % self.capacity] for k in range(self.size)]

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise StateError("cannot sample from an empty replay buffer")
        if batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        return rng.integers(0, self.size, size=batch_size)

    def sample_batch(self, batch_size: int, rng: np.random.Generator) -> Batch:
        idx = self.sample_indices(batch_size, rng)
        return Batch(self._states[idx], self._actions[idx], self._rewards[idx], self._next_states[idx], self._terminals[idx])

    def sample_uniform(self, batch_size: int, rng: np.random.Generator) -> list[Experience]:
        """Draw ``batch_size`` experiences i.i.d. uniformly, with replacement."""
        return [self[int(i)] for i in self.sample_indices(batch_size, rng)]

    def dump_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.contents():
                fh.write(json.dumps(e.to_dict()) + "\n")
