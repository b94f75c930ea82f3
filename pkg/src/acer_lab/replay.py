"""Episodic replay memory with behaviour-policy probabilities.

Episodes are stored as stacked arrays so a sampled batch can be pushed
through the network in one pass.  Capacity counts transitions and whole
episodes are evicted oldest first.
"""

from __future__ import annotations

import io
import struct
from collections import deque
from dataclasses import dataclass

import numpy as np

from acer_lab.errors import StoredDataError

MAX_EPISODE_LENGTH = 25
_MAGIC = b"ACERRPL1"


@dataclass(frozen=True)
class Transition:
    belief: np.ndarray
    action: int
    reward: float
    mu_prob: float
    mu: np.ndarray
    mask: np.ndarray


@dataclass(frozen=True)
class EpisodeRecord:
    beliefs: np.ndarray  # (T, D)
    actions: np.ndarray  # (T,) int
    rewards: np.ndarray  # (T,)
    mu: np.ndarray  # (T, A) behaviour distribution at each step
    masks: np.ndarray  # (T, A) bool
    terminal: bool = True

    def __post_init__(self):
        # private read-only copies: later policy updates must never touch stored mu
        for name in ("beliefs", "actions", "rewards", "mu", "masks"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        t = len(self.actions)
        if not 1 <= t <= MAX_EPISODE_LENGTH:
            raise StoredDataError(f"episode length {t} outside [1, {MAX_EPISODE_LENGTH}]")
        if self.beliefs.shape[0] != t or self.rewards.shape != (t,) or self.mu.shape[0] != t or self.masks.shape != self.mu.shape:
            raise StoredDataError("episode arrays disagree in length or width")
        if not np.allclose(self.mu.sum(axis=1), 1.0, atol=1e-9, rtol=0):
            raise StoredDataError("behaviour distributions must sum to 1")
        if (self.mu_taken <= 0).any():
            raise StoredDataError("behaviour probability of a taken action is zero")
        object.__setattr__(self, "total_return", float(self.rewards.sum()))

    @classmethod
    def from_transitions(cls, transitions: list[Transition], terminal: bool = True) -> EpisodeRecord:
        if not transitions:
            raise StoredDataError("episode has no transitions")
        for tr in transitions:
            if not np.isclose(tr.mu[tr.action], tr.mu_prob, rtol=0, atol=1e-12):
                raise StoredDataError("mu_prob disagrees with the stored distribution")
        return cls(
            beliefs=np.array([t.belief for t in transitions], dtype=np.float64),
            actions=np.array([t.action for t in transitions], dtype=np.int64),
            rewards=np.array([t.reward for t in transitions], dtype=np.float64),
            mu=np.array([t.mu for t in transitions], dtype=np.float64),
            masks=np.array([t.mask for t in transitions], dtype=bool),
            terminal=terminal,
        )

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def mu_taken(self) -> np.ndarray:
        return self.mu[np.arange(len(self.actions)), self.actions]

    def transitions(self) -> list[Transition]:
        return [
            Transition(self.beliefs[i], int(a), float(self.rewards[i]), float(self.mu[i, a]), self.mu[i], self.masks[i])
            for i, a in enumerate(self.actions)
        ]


class ReplayMemory:
    def __init__(self, capacity: int = 2000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.episodes: deque[EpisodeRecord] = deque()
        self.n_transitions = 0

    def __len__(self) -> int:
        return len(self.episodes)

    def store(self, episode: EpisodeRecord):
        if len(episode) > self.capacity:
            raise StoredDataError(f"episode of {len(episode)} transitions exceeds capacity {self.capacity}")
        self.episodes.append(episode)
        self.n_transitions += len(episode)
        while self.n_transitions > self.capacity:
            self.n_transitions -= len(self.episodes.popleft())

    def sample(self, batch_size: int, rng: np.random.Generator, unit: str = "episodes") -> list[EpisodeRecord]:
        """Uniform episodes; ``unit="transitions"`` draws episodes until ``batch_size`` steps are covered."""
        n = len(self.episodes)
        if n == 0:
            return []
        if unit == "episodes":
            idx = rng.choice(n, size=batch_size, replace=n < batch_size)
            return [self.episodes[i] for i in idx]
        if unit != "transitions":
            raise ValueError(f"unknown sampling unit {unit!r}")
        out, covered = [], 0
        for i in rng.permutation(n):
            if covered >= batch_size:
                break
            out.append(self.episodes[i])
            covered += len(self.episodes[i])
        return out

    def copy(self) -> ReplayMemory:
        # records are immutable, so sharing them is a deep copy in effect
        other = ReplayMemory(self.capacity)
        other.episodes = deque(self.episodes)
        other.n_transitions = self.n_transitions
        return other

    # -- checkpoint -----------------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(_MAGIC)
        buf.write(struct.pack("<QQ", self.capacity, len(self.episodes)))
        for ep in self.episodes:
            t, d = ep.beliefs.shape
            buf.write(struct.pack("<IIIB", t, d, ep.mu.shape[1], ep.terminal))
            buf.write(ep.beliefs.astype("<f8").tobytes())
            buf.write(ep.actions.astype("<i8").tobytes())
            buf.write(ep.rewards.astype("<f8").tobytes())
            buf.write(ep.mu.astype("<f8").tobytes())
            buf.write(np.packbits(ep.masks, axis=None).tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> ReplayMemory:
        if data[:8] != _MAGIC:
            raise StoredDataError("not a replay checkpoint (bad magic)")
        view = memoryview(data)
        pos = 8
        capacity, count = struct.unpack_from("<QQ", view, pos)
        pos += 16
        mem = cls(capacity)

        def take(dtype, shape):
            nonlocal pos
            size = int(np.prod(shape)) * np.dtype(dtype).itemsize
            arr = np.frombuffer(view[pos : pos + size], dtype=dtype).reshape(shape).astype(dtype[1:])
            pos += size
            return arr

        try:
            for _ in range(count):
                t, d, a, terminal = struct.unpack_from("<IIIB", view, pos)
                pos += 13
                beliefs = take("<f8", (t, d))
                actions = take("<i8", (t,))
                rewards = take("<f8", (t,))
                mu = take("<f8", (t, a))
                nbytes = (t * a + 7) // 8
                masks = np.unpackbits(np.frombuffer(view[pos : pos + nbytes], dtype=np.uint8), count=t * a).reshape(t, a).astype(bool)
                pos += nbytes
                mem.store(EpisodeRecord(beliefs, actions, rewards, mu, masks, bool(terminal)))
        except (struct.error, ValueError) as exc:
            raise StoredDataError(f"truncated or corrupt replay checkpoint: {exc}") from None
        if pos != len(data):
            raise StoredDataError("trailing bytes in replay checkpoint")
        return mem
