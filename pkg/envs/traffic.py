"""
TrafficGridLite: store-and-forward queueing model of a signalized grid

Each intersection has six incoming lanes: the E-W streets carry a
straight/right lane and a left-turn lane per approach, the N-S avenues a
single lane per approach. One of five phases is green per step:

    EW-S   west + east straight lanes
    EW-L   west + east left lanes
    W-LS   both west lanes
    E-LS   both east lanes
    NS-LS  north + south lanes

A served lane releases up to `saturation` vehicles per step, except on a
step where the phase changes (all-yellow: nothing is released). Released
vehicles move one intersection per step along a column-first, then-row
shortest path, or leave the grid at their destination.

Observation per lane: (time_delay, wave) where time_delay is the head
vehicle's wait clock in steps and wave is the full queue length.
Reward: r^i = -sum_l (queue_len[l] + w * time_delay[l]) after the step.
"""

import logging
from collections import deque
from typing import Optional

import numpy as np

from comm.topology import AgentTopology
from envs.base import MultiAgentEnv, StepResult
from errors import ConfigurationError
from models import FlowSpec, TrafficConfig

logger = logging.getLogger(__name__)

PHASES = ("EW-S", "EW-L", "W-LS", "E-LS", "NS-LS")
LANES = ("W-S", "W-L", "E-S", "E-L", "N", "S")
LANE_INDEX = {name: index for index, name in enumerate(LANES)}
PHASE_LANES = {
    0: (LANE_INDEX["W-S"], LANE_INDEX["E-S"]),
    1: (LANE_INDEX["W-L"], LANE_INDEX["E-L"]),
    2: (LANE_INDEX["W-S"], LANE_INDEX["W-L"]),
    3: (LANE_INDEX["E-S"], LANE_INDEX["E-L"]),
    4: (LANE_INDEX["N"], LANE_INDEX["S"]),
}

STEP = {"N": (-1, 0), "S": (1, 0), "E": (0, 1), "W": (0, -1)}
OPPOSITE = {"N": "S", "S": "N", "E": "W", "W": "E"}
LEFT_OF = {"E": "N", "N": "W", "W": "S", "S": "E"}

# (destination cell, exit side)
Vehicle = tuple[tuple[int, int], str]


def flow_rate(flow: FlowSpec, t: int) -> float:
    """Triangular rate: base + peak * max(0, 1 - |t - peak_step| / ramp_steps)"""
    shape = max(0.0, 1.0 - abs(t - flow.peak_step) / flow.ramp_steps)
    return flow.base_rate + flow.peak_rate * shape


def route_direction(cell: tuple[int, int], vehicle: Vehicle) -> str:
    """Next travel direction: close the column gap first, then the row gap, then exit"""
    (row, col), ((dest_row, dest_col), exit_side) = cell, vehicle
    if col < dest_col:
        return "E"
    if col > dest_col:
        return "W"
    if row < dest_row:
        return "S"
    if row > dest_row:
        return "N"
    return exit_side


def lane_for(cell: tuple[int, int], approach: str, vehicle: Vehicle) -> int:
    """Incoming lane a vehicle joins when it reaches `cell` from side `approach`"""
    if approach in ("N", "S"):
        return LANE_INDEX[approach]
    heading = OPPOSITE[approach]
    direction = route_direction(cell, vehicle)
    # U-turns share the left lane
    turns_left = direction in (LEFT_OF[heading], approach)
    return LANE_INDEX[f"{approach}-{'L' if turns_left else 'S'}"]


class TrafficGridLite(MultiAgentEnv):
    obs_size = 2 * len(LANES)
    action_size = len(PHASES)
    terminal_on_horizon = False

    def __init__(self, config: Optional[TrafficConfig] = None):
        super().__init__()
        self.config = config or TrafficConfig()
        self.topology = AgentTopology.full_grid(
            self.config.grid_height, self.config.grid_width, self.config.neighborhood
        )
        self.horizon = self.config.horizon
        self._rng = np.random.default_rng(0)
        self._clear()

    def _clear(self) -> None:
        n = self.num_agents
        self.queues: list[list[deque]] = [[deque() for _ in LANES] for _ in range(n)]
        self.head_wait = np.zeros((n, len(LANES)), dtype=np.int64)
        self.phases = np.zeros(n, dtype=np.int64)
        self.vehicles_arrived = 0
        self.vehicles_exited = 0

    # ── State views ──────────────────────────────────────────────────────────

    def queue_lengths(self) -> np.ndarray:
        return np.array([[len(lane) for lane in lanes] for lanes in self.queues], dtype=np.int64)

    def vehicles_in_queues(self) -> int:
        return int(self.queue_lengths().sum())

    def observations(self) -> np.ndarray:
        obs = np.empty((self.num_agents, self.obs_size), dtype=np.float64)
        obs[:, 0::2] = self.head_wait
        obs[:, 1::2] = self.queue_lengths()
        return obs

    def rewards(self) -> np.ndarray:
        lane_cost = self.queue_lengths() + self.config.delay_weight * self.head_wait
        return -lane_cost.sum(axis=1).astype(np.float64)

    def arrival_rates(self, t: int) -> dict[str, float]:
        return {flow.name: flow_rate(flow, t) for flow in self.config.flows}

    # ── Dynamics ─────────────────────────────────────────────────────────────

    def enqueue(self, agent: int, lane: str, destination: tuple[int, int], exit_side: str) -> None:
        """Place one vehicle at the back of a lane (fixtures and scenario setup)"""
        if lane not in LANE_INDEX:
            raise ConfigurationError(f"Unknown lane {lane}; expected one of {LANES}")
        self.queues[agent][LANE_INDEX[lane]].append((tuple(destination), exit_side))
        self.vehicles_arrived += 1

    def _reset(self, rng: np.random.Generator) -> np.ndarray:
        self._rng = rng
        self._clear()
        logger.debug(f"TrafficGridLite reset: {self.num_agents} intersections, horizon {self.horizon}")
        return self.observations()

    def _arrivals(self) -> None:
        for flow in self.config.flows:
            per_pair = flow_rate(flow, self.t) / len(flow.od_pairs)
            for pair in flow.od_pairs:
                count = int(self._rng.poisson(per_pair)) if per_pair > 0 else 0
                vehicle = (tuple(pair.destination), pair.exit)
                origin = self.topology.cell_to_agent[pair.origin]
                lane = lane_for(tuple(pair.origin), pair.entry, vehicle)
                for _ in range(count):
                    self.queues[origin][lane].append(vehicle)
                self.vehicles_arrived += count

    def _step(self, actions: np.ndarray) -> StepResult:
        self._arrivals()

        released = np.zeros_like(self.head_wait, dtype=bool)
        moving: list[tuple[int, int, Vehicle]] = []
        for agent, action in enumerate(actions):
            if action != self.phases[agent]:
                self.phases[agent] = action
                continue
            cell = self.topology.agent_positions[agent]
            for lane in PHASE_LANES[int(action)]:
                queue = self.queues[agent][lane]
                for _ in range(min(self.config.saturation, len(queue))):
                    vehicle = queue.popleft()
                    released[agent, lane] = True
                    direction = route_direction(cell, vehicle)
                    if cell == vehicle[0] and direction == vehicle[1]:
                        self.vehicles_exited += 1
                        continue
                    d_row, d_col = STEP[direction]
                    nxt = (cell[0] + d_row, cell[1] + d_col)
                    moving.append((int(self.topology.cell_to_agent[nxt]), lane_for(nxt, OPPOSITE[direction], vehicle), vehicle))

        for agent, lane, vehicle in moving:
            self.queues[agent][lane].append(vehicle)

        lengths = self.queue_lengths()
        self.head_wait[released] = 0
        self.head_wait = np.where(lengths > 0, self.head_wait + 1, 0)

        info = {
            "queue_length": float(lengths.sum(axis=1).mean()),
            "time_delay": float(self.head_wait.mean()),
            "queue_totals": lengths.sum(axis=1).tolist(),
            "vehicles_arrived": self.vehicles_arrived,
            "vehicles_exited": self.vehicles_exited,
        }
        return StepResult(self.observations(), self.rewards(), done=False, info=info)

    def episode_metrics(self, rewards: list[np.ndarray], infos: list[dict]) -> dict[str, float]:
        """
        Queue length is vehicles queued per intersection; time delay is the
        head-of-queue wait averaged over lanes. Averages run over the
        episode's steps, finals are the last step's values.
        """
        queues = [info["queue_length"] for info in infos]
        delays = [info["time_delay"] for info in infos]
        return {
            "mean_reward": float(np.mean(rewards)),
            "avg_queue_len": float(np.mean(queues)),
            "final_queue_len": float(queues[-1]),
            "avg_time_delay": float(np.mean(delays)),
            "final_time_delay": float(delays[-1]),
        }
