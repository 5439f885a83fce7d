"""
Environment contract shared by every native environment
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from comm.topology import AgentTopology
from errors import UsageError


@dataclass
class StepResult:
    observations: np.ndarray  # [N, D_o]
    rewards: np.ndarray       # [N]
    done: bool
    info: dict = field(default_factory=dict)


class MultiAgentEnv(ABC):
    """
    Partially observable Markov game on a grid of agents.

    reset(seed) starts an episode; step(actions) may only be called between
    reset and the step that returns done.
    """

    topology: AgentTopology
    obs_size: int
    action_size: int
    horizon: int
    # False for time-limit episodes whose last state should still be bootstrapped
    terminal_on_horizon: bool = True

    def __init__(self):
        self._active = False
        self.t = 0

    @property
    def num_agents(self) -> int:
        return self.topology.num_agents

    def reset(self, seed: int) -> np.ndarray:
        self.t = 0
        self._active = True
        return self._reset(np.random.default_rng(seed))

    def step(self, actions) -> StepResult:
        if not self._active:
            raise UsageError(f"{type(self).__name__}.step called outside reset..done")
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (self.num_agents,):
            raise UsageError(f"Expected {self.num_agents} actions, got shape {actions.shape}")
        if np.any((actions < 0) | (actions >= self.action_size)):
            raise UsageError(f"Actions must lie in [0, {self.action_size}), got {actions.tolist()}")
        result = self._step(actions)
        self.t += 1
        result.done = self.t >= self.horizon
        if result.done:
            self._active = False
        return result

    def episode_metrics(self, rewards: list[np.ndarray], infos: list[dict]) -> dict[str, float]:
        """Evaluation metrics of one finished episode"""
        return {"mean_reward": float(np.mean(rewards))}

    @abstractmethod
    def _reset(self, rng: np.random.Generator) -> np.ndarray:
        ...

    @abstractmethod
    def _step(self, actions: np.ndarray) -> StepResult:
        ...
