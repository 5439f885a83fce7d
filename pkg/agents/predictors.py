"""
Supervised predictors fed by the previous step

PRN predicts each agent's real-time Q-values, OPN its real-time
observation. Both read (o_{t-1}, q_{t-1}) of the agent and its neighbors:
a shared encoder maps each agent's concatenated pair to a latent vector,
and a DCCP mixes the latents across the neighborhood.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from comm.dccp import DccpCache, DccpParams, dccp_backward, dccp_forward
from comm.topology import AgentTopology
from errors import ConfigurationError, UsageError
from nn.core import DTYPE, Mlp, MlpCache, ParameterBlock


@dataclass
class PredictorCache:
    encoder: MlpCache
    comm: DccpCache


@dataclass
class PredictorNet:
    """Shared encoder followed by a DCCP whose channel count equals the output size"""
    name: str
    encoder: Mlp
    comm: DccpParams
    obs_size: int
    action_size: int

    @classmethod
    def create(
        cls,
        name: str,
        num_agents: int,
        obs_size: int,
        action_size: int,
        output_size: int,
        encoder_hidden: list[int],
        kernels_per_channel: int,
        kernel_size: int,
        rng: np.random.Generator,
    ) -> "PredictorNet":
        encoder = Mlp.create(f"{name}.encoder", obs_size + action_size, encoder_hidden, output_size, rng)
        comm = DccpParams.create(f"{name}.comm", num_agents, output_size, kernels_per_channel, kernel_size, rng)
        return cls(name, encoder, comm, obs_size, action_size)

    @property
    def output_size(self) -> int:
        return self.comm.channels

    def parameters(self) -> list[ParameterBlock]:
        return self.encoder.parameters() + self.comm.parameters()

    def forward(
        self,
        topology: AgentTopology,
        prev_obs: np.ndarray,
        prev_q: np.ndarray,
    ) -> tuple[np.ndarray, PredictorCache]:
        """
        Args:
            prev_obs: [N, D_o] or [B, N, D_o]
            prev_q: [N, |A|] or [B, N, |A|]

        Returns:
            (prediction [..., N, output_size], cache)
        """
        prev_obs = np.asarray(prev_obs, dtype=DTYPE)
        prev_q = np.asarray(prev_q, dtype=DTYPE)
        if prev_obs.shape[-1] != self.obs_size or prev_q.shape[-1] != self.action_size:
            raise ConfigurationError(
                f"{self.name} expects obs length {self.obs_size} and Q length {self.action_size}, "
                f"got {prev_obs.shape} and {prev_q.shape}"
            )
        if prev_obs.shape[:-1] != prev_q.shape[:-1]:
            raise ConfigurationError(f"{self.name}: obs {prev_obs.shape} and Q {prev_q.shape} disagree on agents/batch")
        latent, encoder_cache = self.encoder.forward(np.concatenate([prev_obs, prev_q], axis=-1))
        prediction, comm_cache = dccp_forward(self.comm, topology, latent)
        return prediction, PredictorCache(encoder_cache, comm_cache)

    def backward(self, cache: Optional[PredictorCache], dprediction: np.ndarray) -> None:
        """Accumulate encoder and DCCP gradients; inputs are data so their cotangent is dropped"""
        if cache is None:
            raise UsageError(f"{self.name}.backward called without a forward cache")
        dlatent = dccp_backward(self.comm, cache.comm, dprediction)
        self.encoder.backward(cache.encoder, dlatent)


def create_prn(num_agents, obs_size, action_size, encoder_hidden, kernels_per_channel, kernel_size, rng) -> PredictorNet:
    """Policy rectification network: latent and output sized |A|"""
    return PredictorNet.create("prn", num_agents, obs_size, action_size, action_size,
                               encoder_hidden, kernels_per_channel, kernel_size, rng)


def create_opn(num_agents, obs_size, action_size, encoder_hidden, kernels_per_channel, kernel_size, rng) -> PredictorNet:
    """Observation prediction network: latent and output sized D_o"""
    return PredictorNet.create("opn", num_agents, obs_size, action_size, obs_size,
                               encoder_hidden, kernels_per_channel, kernel_size, rng)


def prn_forward(net: PredictorNet, topology: AgentTopology, prev_obs: np.ndarray, prev_q: np.ndarray) -> np.ndarray:
    q_hat, _ = net.forward(topology, prev_obs, prev_q)
    return q_hat


def opn_forward(net: PredictorNet, topology: AgentTopology, prev_obs: np.ndarray, prev_q: np.ndarray) -> np.ndarray:
    o_hat, _ = net.forward(topology, prev_obs, prev_q)
    return o_hat


def squared_error(prediction: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """
    Sum over agents of squared Euclidean error, averaged over leading batch axes.

    Returns:
        (loss, dloss/dprediction)
    """
    prediction = np.asarray(prediction, dtype=DTYPE)
    target = np.asarray(target, dtype=DTYPE)
    if prediction.shape != target.shape:
        raise ConfigurationError(f"Prediction shape {prediction.shape} does not match target shape {target.shape}")
    batch = int(np.prod(prediction.shape[:-2])) if prediction.ndim > 2 else 1
    diff = prediction - target
    loss = float(np.sum(diff * diff)) / batch
    return loss, 2.0 * diff / batch


def prn_loss(q_hat: np.ndarray, q: np.ndarray) -> float:
    """sum_i ||q^i - q_hat^i||^2"""
    return squared_error(q_hat, q)[0]


def opn_loss(o_hat: np.ndarray, o: np.ndarray) -> float:
    """sum_i ||o^i - o_hat^i||^2"""
    return squared_error(o_hat, o)[0]
