"""
Depthwise Convolution-based Communication Protocol (DCCP)

For every channel m a set of K kernels (shared by all agents) is
correlated with the n x n patch of the channel field centered on each
agent, giving u^i_m in R^K; agent i then mixes them with its own weights:

    z^i_m = sum_k u^i_m[k] * w^i_m[k]

Cells outside the grid and cells without an agent contribute zero.
Channel m of the output only ever reads channel m of the inputs.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from comm.topology import AgentTopology
from errors import ConfigurationError, UsageError
from nn.core import DTYPE, ParameterBlock


@dataclass
class DccpParams:
    """Shared kernels [M, K, n, n] and agent-specific mixing weights [N, M, K]"""
    kernels: ParameterBlock
    agent_weights: ParameterBlock

    @classmethod
    def create(
        cls,
        name: str,
        num_agents: int,
        channels: int,
        kernels_per_channel: int,
        kernel_size: int,
        rng: np.random.Generator,
    ) -> "DccpParams":
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ConfigurationError(f"DCCP kernel size must be odd and positive, got {kernel_size}")
        bound = 1.0 / math.sqrt(kernel_size * kernel_size)
        kernels = ParameterBlock.uniform(
            f"{name}.kernels", (channels, kernels_per_channel, kernel_size, kernel_size), bound, rng
        )
        agent_weights = ParameterBlock.zeros(f"{name}.agent_weights", (num_agents, channels, kernels_per_channel))
        agent_weights.values.fill(1.0 / kernels_per_channel)
        return cls(kernels, agent_weights)

    @property
    def channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def kernels_per_channel(self) -> int:
        return self.kernels.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[2]

    @property
    def num_agents(self) -> int:
        return self.agent_weights.shape[0]

    def parameters(self) -> list[ParameterBlock]:
        return [self.kernels, self.agent_weights]


@dataclass
class DccpCache:
    """Forward record needed by dccp_backward"""
    topology: AgentTopology
    patches: np.ndarray  # [B, N, M, n, n]
    u: np.ndarray        # [B, N, M, K]
    batched: bool


def _as_batch(inputs: np.ndarray, params: DccpParams, topology: AgentTopology) -> tuple[np.ndarray, bool]:
    x = np.asarray(inputs, dtype=DTYPE)
    batched = x.ndim == 3
    if not batched:
        x = x[np.newaxis]
    if x.ndim != 3 or x.shape[1] != topology.num_agents or x.shape[2] != params.channels:
        raise ConfigurationError(
            f"DCCP expects inputs of shape [N={topology.num_agents}, M={params.channels}] "
            f"(optionally batched), got {np.shape(inputs)}"
        )
    if params.num_agents != topology.num_agents:
        raise ConfigurationError(
            f"DCCP weights are sized for {params.num_agents} agents, topology has {topology.num_agents}"
        )
    return x, batched


def channel_field(inputs: np.ndarray, topology: AgentTopology, pad: int = 0) -> np.ndarray:
    """
    Arrange per-agent channel vectors onto the grid.

    Args:
        inputs: [B, N, M] agent vectors
        pad: zero border added on every side

    Returns:
        [B, M, H + 2*pad, W + 2*pad] field, zero at empty cells
    """
    batch, _, channels = inputs.shape
    field = np.zeros((batch, channels, topology.grid_height + 2 * pad, topology.grid_width + 2 * pad), dtype=DTYPE)
    field[:, :, topology.rows + pad, topology.cols + pad] = inputs.transpose(0, 2, 1)
    return field


def dccp_forward(
    params: DccpParams,
    topology: AgentTopology,
    inputs: np.ndarray,
) -> tuple[np.ndarray, DccpCache]:
    """
    Compute z for every agent.

    Args:
        params: Kernels and mixing weights
        topology: Agent grid placement
        inputs: [N, M] or [B, N, M] per-agent channel vectors

    Returns:
        (z, cache) with z shaped like inputs
    """
    x, batched = _as_batch(inputs, params, topology)
    n = params.kernel_size
    pad = n // 2

    padded = channel_field(x, topology, pad)
    offsets = np.arange(n)
    patch_rows = topology.rows[:, None] + offsets  # [N, n] in padded coordinates
    patch_cols = topology.cols[:, None] + offsets
    patches = padded[:, :, patch_rows[:, :, None], patch_cols[:, None, :]]  # [B, M, N, n, n]
    patches = patches.transpose(0, 2, 1, 3, 4)

    u = np.einsum("bimxy,mkxy->bimk", patches, params.kernels.values)
    z = np.einsum("bimk,imk->bim", u, params.agent_weights.values)

    cache = DccpCache(topology=topology, patches=patches, u=u, batched=batched)
    return (z if batched else z[0]), cache


def dccp_backward(
    params: DccpParams,
    cache: Optional[DccpCache],
    dz: np.ndarray,
) -> np.ndarray:
    """
    Accumulate kernel and mixing-weight gradients and return input cotangents.

    Kernel gradients are summed over every agent and batch entry since the
    kernels are shared; each agent's weight row only receives its own term.
    """
    if cache is None:
        raise UsageError("dccp_backward called without a forward cache")
    dz = np.asarray(dz, dtype=DTYPE)
    if not cache.batched:
        dz = dz[np.newaxis]
    if dz.shape != cache.u.shape[:3]:
        raise ConfigurationError(f"DCCP cotangent shape {dz.shape} does not match output shape {cache.u.shape[:3]}")

    weights = params.agent_weights.values
    params.agent_weights.grads += np.einsum("bim,bimk->imk", dz, cache.u)
    du = dz[..., np.newaxis] * weights[np.newaxis]  # [B, N, M, K]
    params.kernels.grads += np.einsum("bimk,bimxy->mkxy", du, cache.patches)
    dpatches = np.einsum("bimk,mkxy->bimxy", du, params.kernels.values)

    topology = cache.topology
    n = params.kernel_size
    pad = n // 2
    batch, num_agents, channels = dz.shape
    dfield = np.zeros((batch, channels, topology.grid_height + 2 * pad, topology.grid_width + 2 * pad), dtype=DTYPE)
    for agent, (row, col) in enumerate(topology.agent_positions):
        dfield[:, :, row:row + n, col:col + n] += dpatches[:, agent]
    dinputs = dfield[:, :, topology.rows + pad, topology.cols + pad].transpose(0, 2, 1)

    return dinputs if cache.batched else dinputs[0]
