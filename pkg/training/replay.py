"""
Joint replay memory

One record per environment timestep holding every agent's slice, so a
sampled minibatch always carries the synchronized neighbor inputs the
predictors need.
"""

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from errors import ConfigurationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class JointTransition:
    """
    e_t = (o_{t-1}, q_{t-1}, o_t, a_t, r_t, q_t, o_{t+1}) for all N agents.

    prev_actions (a_{t-1}, -1 at episode start) and actions feed the MF-Q
    mean-action input; the other variants ignore them.
    """
    t: int
    prev_obs: np.ndarray      # [N, D_o]
    prev_q: np.ndarray        # [N, |A|]
    obs: np.ndarray           # [N, D_o]
    actions: np.ndarray       # [N]
    rewards: np.ndarray       # [N]
    q: np.ndarray             # [N, |A|] behavior-time values
    next_obs: np.ndarray      # [N, D_o]
    terminal: bool
    prev_actions: np.ndarray  # [N]


@dataclass
class TransitionBatch:
    """Field-wise stack of sampled transitions; leading axis is the batch"""
    prev_obs: np.ndarray
    prev_q: np.ndarray
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    q: np.ndarray
    next_obs: np.ndarray
    terminal: np.ndarray
    prev_actions: np.ndarray

    @classmethod
    def stack(cls, transitions: list[JointTransition]) -> "TransitionBatch":
        if not transitions:
            raise ConfigurationError("Cannot stack an empty list of transitions")
        return cls(
            prev_obs=np.stack([e.prev_obs for e in transitions]),
            prev_q=np.stack([e.prev_q for e in transitions]),
            obs=np.stack([e.obs for e in transitions]),
            actions=np.stack([e.actions for e in transitions]).astype(np.int64),
            rewards=np.stack([e.rewards for e in transitions]),
            q=np.stack([e.q for e in transitions]),
            next_obs=np.stack([e.next_obs for e in transitions]),
            terminal=np.array([e.terminal for e in transitions], dtype=bool),
            prev_actions=np.stack([e.prev_actions for e in transitions]).astype(np.int64),
        )

    @property
    def size(self) -> int:
        return int(self.obs.shape[0])


class ReplayBuffer:
    """Fixed-capacity FIFO of joint transitions with a seeded uniform sampler"""

    def __init__(self, capacity: int, seed: int | np.random.SeedSequence = 0):
        if capacity < 1:
            raise ConfigurationError(f"Replay capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.memory: deque[JointTransition] = deque(maxlen=capacity)
        self._rng = np.random.default_rng(seed)
        self._full = False

    def __len__(self) -> int:
        return len(self.memory)

    def add(self, transition: JointTransition) -> None:
        self.memory.append(transition)
        if len(self.memory) == self.capacity and not self._full:
            self._full = True
            logger.info(f"Replay buffer full at {self.capacity} records; oldest now evicted first")

    def sample(self, batch_size: int) -> TransitionBatch:
        """Uniform sample without replacement"""
        if batch_size > len(self.memory):
            raise ConfigurationError(f"Cannot sample {batch_size} records from a buffer holding {len(self.memory)}")
        indices = self._rng.choice(len(self.memory), size=batch_size, replace=False)
        return TransitionBatch.stack([self.memory[int(i)] for i in indices])
