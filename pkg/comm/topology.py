"""
Agent placement on a grid and the neighbor sets derived from it
"""

from dataclasses import dataclass, field

import numpy as np

from errors import ConfigurationError


@dataclass
class AgentTopology:
    """
    Agents embedded on a grid.

    neighbor_sets[i] lists every other agent inside the
    neighborhood x neighborhood patch centered on agent i, in row-major
    cell order.
    """
    grid_height: int
    grid_width: int
    agent_positions: list[tuple[int, int]]
    neighborhood: int = 3
    neighbor_sets: list[list[int]] = field(init=False)
    cell_to_agent: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.grid_height < 1 or self.grid_width < 1:
            raise ConfigurationError(f"Grid must be at least 1x1, got {self.grid_height}x{self.grid_width}")
        if self.neighborhood < 1 or self.neighborhood % 2 == 0:
            raise ConfigurationError(f"Neighborhood size must be odd and positive, got {self.neighborhood}")
        if not self.agent_positions:
            raise ConfigurationError("Topology needs at least one agent")

        self.agent_positions = [(int(r), int(c)) for r, c in self.agent_positions]
        self.cell_to_agent = np.full((self.grid_height, self.grid_width), -1, dtype=np.int64)
        for agent, (row, col) in enumerate(self.agent_positions):
            if not (0 <= row < self.grid_height and 0 <= col < self.grid_width):
                raise ConfigurationError(f"Agent {agent} at {(row, col)} lies outside the grid")
            if self.cell_to_agent[row, col] != -1:
                raise ConfigurationError(f"Agents {self.cell_to_agent[row, col]} and {agent} share cell {(row, col)}")
            self.cell_to_agent[row, col] = agent

        radius = self.neighborhood // 2
        self.neighbor_sets = []
        for agent, (row, col) in enumerate(self.agent_positions):
            neighbors = []
            for r in range(max(0, row - radius), min(self.grid_height, row + radius + 1)):
                for c in range(max(0, col - radius), min(self.grid_width, col + radius + 1)):
                    other = int(self.cell_to_agent[r, c])
                    if other != -1 and other != agent:
                        neighbors.append(other)
            self.neighbor_sets.append(neighbors)

    @classmethod
    def full_grid(cls, height: int, width: int, neighborhood: int = 3) -> "AgentTopology":
        """One agent per cell, numbered row-major"""
        positions = [(r, c) for r in range(height) for c in range(width)]
        return cls(height, width, positions, neighborhood)

    @property
    def num_agents(self) -> int:
        return len(self.agent_positions)

    @property
    def rows(self) -> np.ndarray:
        return np.array([r for r, _ in self.agent_positions], dtype=np.int64)

    @property
    def cols(self) -> np.ndarray:
        return np.array([c for _, c in self.agent_positions], dtype=np.int64)

    def isolated_agents(self) -> list[int]:
        return [agent for agent, neighbors in enumerate(self.neighbor_sets) if not neighbors]

    def neighbor_mean_matrix(self) -> np.ndarray:
        """
        N x N matrix P with P[i, j] = 1/|N_i| for j in N_i.

        Rows of isolated agents are all zero.
        """
        matrix = np.zeros((self.num_agents, self.num_agents), dtype=np.float64)
        for agent, neighbors in enumerate(self.neighbor_sets):
            if neighbors:
                matrix[agent, neighbors] = 1.0 / len(neighbors)
        return matrix
