"""
Value function network and its ablation variants

FULL       q = DQN([o_t, s~_t, q~_t])
DCCP_ONLY  q = DQN([o_t, s~_t])
IQL        q = DQN(o_t)
MFQ        q = DQN([o_t, mean previous neighbor action])

with s~ = DCCP_SE(o^) (state estimation) and
q~ = neighbor mean of q^ + DCCP_ME(q^) (enhanced mean-field estimate).
The DQN head is shared by all agents; only the DCCP mixing weights are
agent-specific. Predictions o^, q^ arrive detached.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from agents.mean_field import neighbor_mean
from comm.dccp import DccpCache, DccpParams, dccp_backward, dccp_forward
from comm.topology import AgentTopology
from errors import ConfigurationError, UsageError
from models import AgentVariant, NetworkSizes
from nn.core import DTYPE, Mlp, MlpCache, ParameterBlock

logger = logging.getLogger(__name__)


def dqn_input_size(variant: AgentVariant, obs_size: int, action_size: int) -> int:
    return {
        AgentVariant.FULL: 2 * obs_size + action_size,
        AgentVariant.DCCP_ONLY: 2 * obs_size,
        AgentVariant.IQL: obs_size,
        AgentVariant.MFQ: obs_size + action_size,
    }[variant]


@dataclass
class VfnCache:
    dqn: MlpCache
    se: Optional[DccpCache] = None
    me: Optional[DccpCache] = None


@dataclass
class VfnNet:
    variant: AgentVariant
    obs_size: int
    action_size: int
    dqn: Mlp
    se_comm: Optional[DccpParams] = None
    me_comm: Optional[DccpParams] = None
    _isolated_flagged: bool = field(default=False, repr=False)

    @classmethod
    def create(
        cls,
        variant: AgentVariant,
        num_agents: int,
        obs_size: int,
        action_size: int,
        sizes: NetworkSizes,
        rng: np.random.Generator,
        name: str = "vfn",
    ) -> "VfnNet":
        se_comm = me_comm = None
        if variant in (AgentVariant.FULL, AgentVariant.DCCP_ONLY):
            se_comm = DccpParams.create(f"{name}.se", num_agents, obs_size,
                                        sizes.dccp_kernels, sizes.dccp_kernel_size, rng)
        if variant is AgentVariant.FULL:
            me_comm = DccpParams.create(f"{name}.me", num_agents, action_size,
                                        sizes.dccp_kernels, sizes.dccp_kernel_size, rng)
        dqn = Mlp.create(f"{name}.dqn", dqn_input_size(variant, obs_size, action_size),
                         sizes.dqn_hidden, action_size, rng)
        return cls(variant, obs_size, action_size, dqn, se_comm, me_comm)

    def parameters(self) -> list[ParameterBlock]:
        blocks = []
        if self.se_comm is not None:
            blocks += self.se_comm.parameters()
        if self.me_comm is not None:
            blocks += self.me_comm.parameters()
        return blocks + self.dqn.parameters()

    def forward(
        self,
        topology: AgentTopology,
        obs: np.ndarray,
        o_hat: Optional[np.ndarray] = None,
        q_hat: Optional[np.ndarray] = None,
        mean_actions: Optional[np.ndarray] = None,
    ) -> tuple[np.ndarray, VfnCache]:
        """
        Q-values for every agent.

        Args:
            obs: [..., N, D_o] real observations o_t
            o_hat: OPN predictions (FULL, DCCP_ONLY)
            q_hat: PRN predictions (FULL)
            mean_actions: mean previous neighbor one-hot actions (MFQ)
        """
        s_tilde = q_tilde = None
        se_cache = me_cache = None
        if self.variant in (AgentVariant.FULL, AgentVariant.DCCP_ONLY):
            if o_hat is None:
                raise ConfigurationError(f"Variant {self.variant.value} needs predicted observations")
            s_tilde, se_cache = dccp_forward(self.se_comm, topology, o_hat)
        if self.variant is AgentVariant.FULL:
            if q_hat is None:
                raise ConfigurationError("Variant full needs predicted Q-values")
            q_tilde, me_cache = self._mean_field(topology, q_hat)

        q, dqn_cache = q_values(self, obs, s_tilde, q_tilde, mean_actions)
        return q, VfnCache(dqn=dqn_cache, se=se_cache, me=me_cache)

    def backward(self, cache: Optional[VfnCache], dq: np.ndarray) -> None:
        """Accumulate gradients into the DQN head and both DCCPs"""
        if cache is None:
            raise UsageError("VfnNet.backward called without a forward cache")
        dx = self.dqn.backward(cache.dqn, dq)
        d_obs = self.obs_size
        if self.variant in (AgentVariant.FULL, AgentVariant.DCCP_ONLY):
            dccp_backward(self.se_comm, cache.se, dx[..., d_obs:2 * d_obs])
        if self.variant is AgentVariant.FULL:
            # the neighbor-mean term has no parameters
            dccp_backward(self.me_comm, cache.me, dx[..., 2 * d_obs:])

    def _mean_field(self, topology: AgentTopology, q_hat: np.ndarray) -> tuple[np.ndarray, DccpCache]:
        if not self._isolated_flagged and topology.isolated_agents():
            logger.warning(f"Agents {topology.isolated_agents()} have no neighbors; their mean term is zero")
            self._isolated_flagged = True
        compensation, me_cache = dccp_forward(self.me_comm, topology, q_hat)
        return neighbor_mean(topology, q_hat) + compensation, me_cache


def state_estimate(net: VfnNet, topology: AgentTopology, o_hat: np.ndarray) -> np.ndarray:
    """s~^i = DCCP_SE(o^^i, {o^^j})"""
    if net.se_comm is None:
        raise ConfigurationError(f"Variant {net.variant.value} has no state-estimation branch")
    s_tilde, _ = dccp_forward(net.se_comm, topology, o_hat)
    return s_tilde


def mean_field_estimate(net: VfnNet, topology: AgentTopology, q_hat: np.ndarray) -> np.ndarray:
    """q~^i = mean_{j in N_i} q^^j + DCCP_ME(q^^i, {q^^j})"""
    if net.me_comm is None:
        raise ConfigurationError(f"Variant {net.variant.value} has no mean-field branch")
    q_tilde, _ = net._mean_field(topology, q_hat)
    return q_tilde


def q_values(
    net: VfnNet,
    obs: np.ndarray,
    s_tilde: Optional[np.ndarray] = None,
    q_tilde: Optional[np.ndarray] = None,
    aux: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, MlpCache]:
    """Assemble the variant's DQN input and evaluate the head"""
    obs = np.asarray(obs, dtype=DTYPE)
    variant = net.variant
    supplied = {"s_tilde": s_tilde is not None, "q_tilde": q_tilde is not None, "aux": aux is not None}
    required = {
        AgentVariant.FULL: {"s_tilde": True, "q_tilde": True, "aux": False},
        AgentVariant.DCCP_ONLY: {"s_tilde": True, "q_tilde": False, "aux": False},
        AgentVariant.IQL: {"s_tilde": False, "q_tilde": False, "aux": False},
        AgentVariant.MFQ: {"s_tilde": False, "q_tilde": False, "aux": True},
    }[variant]
    if supplied != required:
        raise ConfigurationError(f"Variant {variant.value} expects inputs {required}, got {supplied}")

    parts = [obs]
    if variant in (AgentVariant.FULL, AgentVariant.DCCP_ONLY):
        parts.append(np.asarray(s_tilde, dtype=DTYPE))
    if variant is AgentVariant.FULL:
        parts.append(np.asarray(q_tilde, dtype=DTYPE))
    if variant is AgentVariant.MFQ:
        parts.append(np.asarray(aux, dtype=DTYPE))
    x = np.concatenate(parts, axis=-1)
    return net.dqn.forward(x)


def greedy_action(q: np.ndarray, mask: Optional[np.ndarray] = None) -> int:
    """Argmax over unmasked entries; ties go to the lowest index"""
    q = np.asarray(q, dtype=DTYPE)
    if mask is None:
        return int(np.argmax(q))
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != q.shape:
        raise ConfigurationError(f"Mask shape {mask.shape} does not match Q shape {q.shape}")
    if not mask.any():
        raise UsageError("greedy_action called with every action masked")
    return int(np.argmax(np.where(mask, q, -np.inf)))


def greedy_actions(q: np.ndarray) -> np.ndarray:
    """Row-wise greedy_action over the last axis"""
    return np.argmax(np.asarray(q), axis=-1)
