"""Core data model: tabular MDPs, replay transitions and categorical policies."""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ROW_SUM_TOL = 1e-9


class MDPValidationError(ValueError):
    """Raised when a TabularMDP violates one of its invariants."""


@dataclass(frozen=True)
class TabularMDP:
    """Finite MDP with explicit dynamics.

    ``transition[s, a, s']`` is the next-state distribution and ``reward[s, a]``
    the expected immediate reward. Terminal states must self-loop with zero reward.
    """

    transition: np.ndarray
    reward: np.ndarray
    initial_dist: np.ndarray
    terminal_mask: np.ndarray
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "transition", np.asarray(self.transition, dtype=np.float64))
        object.__setattr__(self, "reward", np.asarray(self.reward, dtype=np.float64))
        object.__setattr__(self, "initial_dist", np.asarray(self.initial_dist, dtype=np.float64))
        object.__setattr__(self, "terminal_mask", np.asarray(self.terminal_mask, dtype=bool))
        object.__setattr__(self, "gamma", float(self.gamma))
        self.validate()

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    def validate(self) -> None:
        """Check every invariant, raising on the first one violated."""
        P, R = self.transition, self.reward
        if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[0] < 1 or P.shape[1] < 1:
            raise MDPValidationError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A = P.shape[:2]
        if R.shape != (S, A):
            raise MDPValidationError(f"reward must have shape ({S}, {A}), got {R.shape}")
        if self.initial_dist.shape != (S,):
            raise MDPValidationError(f"initial_dist must have shape ({S},)")
        if self.terminal_mask.shape != (S,):
            raise MDPValidationError(f"terminal must have shape ({S},)")
        if not 0.0 <= self.gamma < 1.0:
            raise MDPValidationError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not np.all(np.isfinite(P)) or np.any(P < 0) or np.any(P > 1):
            raise MDPValidationError("transition entries must lie in [0, 1]")
        sums = P.sum(axis=2)
        bad = np.argwhere(np.abs(sums - 1.0) > ROW_SUM_TOL)
        if len(bad):
            s, a = bad[0]
            raise MDPValidationError(f"transition[{s}][{a}] sums to {sums[s, a]!r}, not 1")
        if np.any(self.initial_dist < 0) or np.any(self.initial_dist > 1):
            raise MDPValidationError("initial_dist entries must lie in [0, 1]")
        if abs(self.initial_dist.sum() - 1.0) > ROW_SUM_TOL:
            raise MDPValidationError("initial_dist must sum to 1")
        if not np.all(np.isfinite(R)):
            raise MDPValidationError("reward must be finite")
        for s in np.flatnonzero(self.terminal_mask):
            if not np.all(P[s, :, s] == 1.0):
                raise MDPValidationError(f"terminal state {s} must self-loop under every action")
            if np.any(R[s] != 0.0):
                raise MDPValidationError(f"terminal state {s} must have zero reward")

    def to_json(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "gamma": self.gamma,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "initial_dist": self.initial_dist.tolist(),
            "terminal": self.terminal_mask.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> TabularMDP:
        for key in ("num_states", "num_actions", "gamma", "transition", "reward", "initial_dist", "terminal"):
            if key not in doc:
                raise MDPValidationError(f"missing field {key!r}")
        try:
            mdp = cls(
                transition=np.array(doc["transition"], dtype=np.float64),
                reward=np.array(doc["reward"], dtype=np.float64),
                initial_dist=np.array(doc["initial_dist"], dtype=np.float64),
                terminal_mask=np.array(doc["terminal"], dtype=bool),
                gamma=doc["gamma"],
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, MDPValidationError):
                raise
            raise MDPValidationError(f"malformed MDP document: {exc}") from exc
        if mdp.num_states != doc["num_states"] or mdp.num_actions != doc["num_actions"]:
            raise MDPValidationError("num_states/num_actions disagree with tensor shapes")
        return mdp


def load_mdp(path: str | Path) -> TabularMDP:
    return TabularMDP.from_json(json.loads(Path(path).read_text()))


def save_mdp(mdp: TabularMDP, path: str | Path) -> None:
    Path(path).write_text(json.dumps(mdp.to_json()))


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool
    behavior_entropy: float | None = None


@dataclass(frozen=True)
class CategoricalDistribution:
    probs: np.ndarray
    log_probs: np.ndarray

    @classmethod
    def from_probs(cls, probs) -> CategoricalDistribution:
        probs = np.asarray(probs, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_probs = np.log(probs)
        dist = cls(probs, log_probs)
        dist.validate()
        return dist

    @classmethod
    def from_logits(cls, logits) -> CategoricalDistribution:
        logits = np.asarray(logits, dtype=np.float64)
        log_probs = log_softmax(logits)
        return cls(np.exp(log_probs), log_probs)

    @property
    def num_actions(self) -> int:
        return self.probs.shape[-1]

    def validate(self) -> None:
        if np.any(self.probs < 0) or not np.all(np.isfinite(self.probs)):
            raise ValueError("probabilities must be finite and non-negative")
        if np.any(np.abs(self.probs.sum(axis=-1) - 1.0) > 1e-6):
            raise ValueError("probabilities must sum to 1")


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def entropy_of_probs(probs: np.ndarray) -> np.ndarray:
    """Entropy in nats along the last axis, with 0 ln 0 = 0."""
    probs = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log(np.where(probs > 0, probs, 1.0)), 0.0)
    return -terms.sum(axis=-1)


def entropy(dist: CategoricalDistribution) -> float:
    dist.validate()
    return float(entropy_of_probs(dist.probs))


class BufferEmptyError(RuntimeError):
    pass


@dataclass
class ReplayBuffer:
    """Fixed-capacity ring of transitions sampled uniformly with replacement.

    Storage is columnar so a sampled batch is a handful of fancy-index reads.
    A lock serialises push against sample for the single-writer/single-reader case.
    """

    capacity: int
    obs_dim: int
    num_actions: int
    rng_seed: int = 0
    size: int = 0
    _ptr: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be positive")
        self.states = np.zeros((self.capacity, self.obs_dim))
        self.next_states = np.zeros((self.capacity, self.obs_dim))
        self.actions = np.zeros(self.capacity, dtype=np.int64)
        self.rewards = np.zeros(self.capacity)
        self.dones = np.zeros(self.capacity, dtype=bool)
        self.behavior_entropy = np.full(self.capacity, np.nan)
        self.rng = np.random.default_rng(self.rng_seed)

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> None:
        if not 0 <= t.action < self.num_actions:
            raise ValueError(f"action {t.action} outside [0, {self.num_actions})")
        if t.behavior_entropy is not None and not (
            0.0 <= t.behavior_entropy <= math.log(self.num_actions) + 1e-9
        ):
            raise ValueError(f"behavior_entropy {t.behavior_entropy} outside [0, ln {self.num_actions}]")
        with self._lock:
            i = self._ptr
            self.states[i] = t.state
            self.next_states[i] = t.next_state
            self.actions[i] = t.action
            self.rewards[i] = t.reward
            self.dones[i] = t.done
            self.behavior_entropy[i] = np.nan if t.behavior_entropy is None else t.behavior_entropy
            self._ptr = (i + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)

    def _oldest_first(self) -> np.ndarray:
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self._ptr) % self.capacity

    def transitions(self) -> list[Transition]:
        """Contents from oldest to newest."""
        return [self._get(i) for i in self._oldest_first()]

    def _get(self, i: int) -> Transition:
        h = self.behavior_entropy[i]
        return Transition(
            self.states[i].copy(),
            int(self.actions[i]),
            float(self.rewards[i]),
            self.next_states[i].copy(),
            bool(self.dones[i]),
            None if np.isnan(h) else float(h),
        )

    def sample_indices(self, batch_size: int, rng: np.random.Generator | None = None) -> np.ndarray:
        if self.size == 0:
            raise BufferEmptyError("cannot sample from an empty replay buffer")
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        rng = self.rng if rng is None else rng
        return rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size: int, seed: int | None = None) -> Batch:
        """Uniform sample with replacement. With ``seed`` the draw is a pure
        function of (contents, seed); without it the buffer's own stream is used."""
        rng = None if seed is None else np.random.default_rng(seed)
        with self._lock:
            idx = self.sample_indices(batch_size, rng)
            return Batch(
                states=self.states[idx],
                actions=self.actions[idx],
                rewards=self.rewards[idx],
                next_states=self.next_states[idx],
                dones=self.dones[idx],
                behavior_entropy=self.behavior_entropy[idx],
            )


def buffer_push(buffer: ReplayBuffer, t: Transition) -> ReplayBuffer:
    buffer.push(t)
    return buffer


def buffer_sample(buffer: ReplayBuffer, batch_size: int, seed: int) -> list[Transition]:
    return buffer.sample(batch_size, seed).to_transitions()


@dataclass(frozen=True)
class Batch:
    """Columnar mini-batch. Missing behavior entropies are NaN."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    behavior_entropy: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)

    @classmethod
    def from_transitions(cls, ts: list[Transition]) -> Batch:
        if not ts:
            raise ValueError("batch must be nonempty")
        return cls(
            states=np.array([t.state for t in ts], dtype=np.float64),
            actions=np.array([t.action for t in ts], dtype=np.int64),
            rewards=np.array([t.reward for t in ts], dtype=np.float64),
            next_states=np.array([t.next_state for t in ts], dtype=np.float64),
            dones=np.array([t.done for t in ts], dtype=bool),
            behavior_entropy=np.array(
                [np.nan if t.behavior_entropy is None else t.behavior_entropy for t in ts]
            ),
        )

    def to_transitions(self) -> list[Transition]:
        return [
            Transition(
                self.states[i],
                int(self.actions[i]),
                float(self.rewards[i]),
                self.next_states[i],
                bool(self.dones[i]),
                None if np.isnan(self.behavior_entropy[i]) else float(self.behavior_entropy[i]),
            )
            for i in range(len(self))
        ]
