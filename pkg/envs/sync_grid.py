"""
SyncGrid: a parity task that needs communication

Each agent holds a hidden fair bit and only observes its own. Its target
is the XOR of the bits in its neighborhood patch (itself included), so
with at least one neighbor an agent acting on its own observation is
right exactly half the time.
"""

import logging

import numpy as np

from comm.topology import AgentTopology
from envs.base import MultiAgentEnv, StepResult
from models import SyncGridConfig

logger = logging.getLogger(__name__)


def patch_parities(topology: AgentTopology, bits: np.ndarray) -> np.ndarray:
    """p^i = XOR of bits over {i} and N_i"""
    bits = np.asarray(bits, dtype=np.int64)
    return np.array(
        [(bits[agent] + bits[neighbors].sum()) % 2 for agent, neighbors in enumerate(topology.neighbor_sets)],
        dtype=np.int64,
    )


def own_observation_reward_bound(topology: AgentTopology) -> np.ndarray:
    """
    Expected first-step reward of the best policy that sees only its own bit.

    1.0 for isolated agents (parity is the own bit), 0.5 otherwise: the
    neighbors' XOR is a fair bit independent of the own bit.
    """
    return np.array([0.5 if neighbors else 1.0 for neighbors in topology.neighbor_sets])


class SyncGrid(MultiAgentEnv):
    obs_size = 1
    action_size = 2
    terminal_on_horizon = True

    def __init__(self, config: SyncGridConfig):
        super().__init__()
        self.config = config
        self.topology = AgentTopology.full_grid(config.grid_height, config.grid_width, config.neighborhood)
        self.horizon = config.horizon
        self.bits = np.zeros(self.num_agents, dtype=np.int64)
        self.parities = np.zeros(self.num_agents, dtype=np.int64)

    def _observations(self) -> np.ndarray:
        return self.bits.astype(np.float64)[:, np.newaxis]

    def _reset(self, rng: np.random.Generator) -> np.ndarray:
        self.bits = rng.integers(0, 2, size=self.num_agents)
        self.parities = patch_parities(self.topology, self.bits)
        logger.debug(f"SyncGrid reset: {int(self.bits.sum())}/{self.num_agents} bits set, "
                     f"{int(self.parities.sum())} odd patches")
        return self._observations()

    def set_bits(self, bits) -> np.ndarray:
        """Overwrite the hidden bits of the current episode (fixtures and demos)"""
        self.bits = np.asarray(bits, dtype=np.int64)
        self.parities = patch_parities(self.topology, self.bits)
        return self._observations()

    def _step(self, actions: np.ndarray) -> StepResult:
        rewards = (actions == self.parities).astype(np.float64)
        return StepResult(self._observations(), rewards, done=False, info={"correct": float(rewards.mean())})

    def episode_metrics(self, rewards: list[np.ndarray], infos: list[dict]) -> dict[str, float]:
        metrics = {"mean_reward": float(np.mean(rewards))}
        later = rewards[1:]
        metrics["mean_reward_after_first"] = float(np.mean(later)) if later else metrics["mean_reward"]
        return metrics
