"""
Brute-force reference implementations

Deliberately loop-based and independent of the vectorized code paths they
check; only used by the oracle suite and tests.
"""

import numpy as np

from comm.topology import AgentTopology


def dense_oracle(weight: np.ndarray, bias: np.ndarray, x: np.ndarray, relu: bool) -> np.ndarray:
    """y[o] = act(sum_i W[o, i] x[i] + b[o]) for a single input vector"""
    out_features, in_features = weight.shape
    y = np.zeros(out_features)
    for o in range(out_features):
        total = bias[o]
        for i in range(in_features):
            total += weight[o, i] * x[i]
        y[o] = max(total, 0.0) if relu else total
    return y


def dccp_oracle(
    kernels: np.ndarray,
    agent_weights: np.ndarray,
    topology: AgentTopology,
    inputs: np.ndarray,
) -> np.ndarray:
    """
    Nested-loop depthwise correlation plus per-agent weighted sum.

    kernels [M, K, n, n], agent_weights [N, M, K], inputs [N, M] -> z [N, M]
    """
    channels, kernel_count, n, _ = kernels.shape
    pad = n // 2
    z = np.zeros((topology.num_agents, channels))
    for agent, (row, col) in enumerate(topology.agent_positions):
        for m in range(channels):
            for k in range(kernel_count):
                u = 0.0
                for dx in range(n):
                    for dy in range(n):
                        r, c = row + dx - pad, col + dy - pad
                        if not (0 <= r < topology.grid_height and 0 <= c < topology.grid_width):
                            continue
                        other = int(topology.cell_to_agent[r, c])
                        if other < 0:
                            continue
                        u += kernels[m, k, dx, dy] * inputs[other, m]
                z[agent, m] += agent_weights[agent, m, k] * u
    return z


def mean_action_oracle(actions: list[np.ndarray]) -> np.ndarray:
    total = np.zeros(len(actions[0]))
    for action in actions:
        for index, value in enumerate(action):
            total[index] += value
    return total / len(actions)


def neighbor_sets_oracle(topology: AgentTopology) -> list[list[int]]:
    """Other agents whose cell lies within the patch, by Chebyshev distance"""
    radius = topology.neighborhood // 2
    sets = []
    for agent, (row, col) in enumerate(topology.agent_positions):
        sets.append([
            other for other, (r, c) in enumerate(topology.agent_positions)
            if other != agent and abs(r - row) <= radius and abs(c - col) <= radius
        ])
    return sets


def neighbor_mean_oracle(topology: AgentTopology, values: np.ndarray) -> np.ndarray:
    """Per-agent average over neighbor_sets_oracle; zero rows for isolated agents"""
    means = np.zeros_like(values, dtype=np.float64)
    for agent, neighbors in enumerate(neighbor_sets_oracle(topology)):
        if neighbors:
            means[agent] = sum(values[j] for j in neighbors) / len(neighbors)
    return means


def traffic_reward_oracle(queue_counts: np.ndarray, head_wait: np.ndarray, delay_weight: float) -> np.ndarray:
    """r^i = -sum_l (queue_len[l] + w * time_delay[l]) from raw lane state"""
    rewards = np.zeros(len(queue_counts))
    for agent in range(len(queue_counts)):
        total = 0.0
        for lane in range(len(queue_counts[agent])):
            total += queue_counts[agent][lane] + delay_weight * head_wait[agent][lane]
        rewards[agent] = -total
    return rewards


def parity_oracle(topology: AgentTopology, bits: np.ndarray) -> np.ndarray:
    parities = np.zeros(topology.num_agents, dtype=np.int64)
    for agent, neighbors in enumerate(neighbor_sets_oracle(topology)):
        value = int(bits[agent])
        for other in neighbors:
            value ^= int(bits[other])
        parities[agent] = value
    return parities
