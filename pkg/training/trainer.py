"""
Training loop: rollout, joint replay, three-loss update, target sync

Per step every agent
1. predicts q^_t (PRN) and o^_t (OPN) from last step's (o, q) of its patch,
2. evaluates its VFN on [o_t, s~_t, q~_t] and acts epsilon-greedily,
3. stores the joint transition.
Training samples whole timesteps, rebuilds the predictions from the stored
previous-step values and applies three disjoint updates:
theta from L_VFN (rate alpha), phi from L_PRN (rate alpha * lambda_1),
varphi from L_OPN (rate alpha * lambda_2). Because the parameter sets are
disjoint this equals one step on L_VFN + lambda_1 L_PRN + lambda_2 L_OPN
under SGD.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from agents.mean_field import neighbor_mean_actions
from agents.predictors import PredictorNet, create_opn, create_prn, squared_error
from agents.vfn import VfnCache, VfnNet, greedy_actions
from comm.topology import AgentTopology
from envs import MultiAgentEnv, StepResult, make_env
from errors import ConfigurationError
from models import AgentVariant, HyperParams, NetworkSizes, RunConfig
from nn.core import DTYPE, OptimizerState, ParameterBlock, copy_values, optimizer_step, zero_grads
from training.replay import JointTransition, ReplayBuffer, TransitionBatch

logger = logging.getLogger(__name__)


# ── Networks and optimizers ─────────────────────────────────────────────────

@dataclass
class AgentNetworks:
    """Every network of one run; PRN exists for FULL, OPN for FULL and DCCP_ONLY"""
    variant: AgentVariant
    topology: AgentTopology
    vfn: VfnNet
    target_vfn: VfnNet
    prn: Optional[PredictorNet] = None
    opn: Optional[PredictorNet] = None

    @property
    def action_size(self) -> int:
        return self.vfn.action_size

    def checkpoint_blocks(self) -> list[ParameterBlock]:
        blocks = []
        if self.prn is not None:
            blocks += self.prn.parameters()
        if self.opn is not None:
            blocks += self.opn.parameters()
        return blocks + self.vfn.parameters() + self.target_vfn.parameters()


def build_networks(variant: AgentVariant, env: MultiAgentEnv, sizes: NetworkSizes, seed) -> AgentNetworks:
    if env.topology.neighborhood != sizes.dccp_kernel_size:
        raise ConfigurationError(
            f"DCCP kernel size {sizes.dccp_kernel_size} does not match the "
            f"{env.topology.neighborhood}x{env.topology.neighborhood} neighbor patch"
        )
    rng = np.random.default_rng(seed)
    n, d_o, n_a = env.num_agents, env.obs_size, env.action_size
    prn = opn = None
    if variant is AgentVariant.FULL:
        prn = create_prn(n, d_o, n_a, sizes.encoder_hidden, sizes.dccp_kernels, sizes.dccp_kernel_size, rng)
    if variant in (AgentVariant.FULL, AgentVariant.DCCP_ONLY):
        opn = create_opn(n, d_o, n_a, sizes.encoder_hidden, sizes.dccp_kernels, sizes.dccp_kernel_size, rng)
    vfn = VfnNet.create(variant, n, d_o, n_a, sizes, rng)
    target = VfnNet.create(variant, n, d_o, n_a, sizes, rng, name="target")
    copy_values(vfn.parameters(), target.parameters())
    return AgentNetworks(variant, env.topology, vfn, target, prn, opn)


@dataclass
class Optimizers:
    vfn: OptimizerState
    prn: Optional[OptimizerState] = None
    opn: Optional[OptimizerState] = None


def build_optimizers(nets: AgentNetworks, hp: HyperParams) -> Optimizers:
    def make(rate: float) -> OptimizerState:
        return OptimizerState(rate, hp.optimizer, hp.adam_beta1, hp.adam_beta2, hp.adam_eps)

    return Optimizers(
        vfn=make(hp.learning_rate),
        prn=make(hp.learning_rate * hp.lambda_prn) if nets.prn is not None else None,
        opn=make(hp.learning_rate * hp.lambda_opn) if nets.opn is not None else None,
    )


def q_forward(
    nets: AgentNetworks,
    net: VfnNet,
    obs: np.ndarray,
    prev_obs: np.ndarray,
    prev_q: np.ndarray,
    prev_actions: np.ndarray,
) -> tuple[np.ndarray, VfnCache]:
    """
    Q-values of `net` (online or target) at o_t, with the variant's auxiliary
    inputs rebuilt from the previous step. Predictions enter detached.
    """
    o_hat = q_hat = aux = None
    if nets.opn is not None:
        o_hat, _ = nets.opn.forward(nets.topology, prev_obs, prev_q)
    if nets.prn is not None:
        q_hat, _ = nets.prn.forward(nets.topology, prev_obs, prev_q)
    if nets.variant is AgentVariant.MFQ:
        aux = neighbor_mean_actions(nets.topology, prev_actions, nets.action_size)
    return net.forward(nets.topology, obs, o_hat, q_hat, aux)


# ── Rollout ─────────────────────────────────────────────────────────────────

@dataclass
class Carry:
    """Previous-step values threaded through an episode"""
    prev_obs: np.ndarray
    prev_q: np.ndarray
    prev_actions: np.ndarray
    obs: np.ndarray

    @classmethod
    def initial(cls, env: MultiAgentEnv, obs: np.ndarray) -> "Carry":
        """o_0 and q_0 are zero vectors, no previous actions"""
        n = env.num_agents
        return cls(
            prev_obs=np.zeros((n, env.obs_size), dtype=DTYPE),
            prev_q=np.zeros((n, env.action_size), dtype=DTYPE),
            prev_actions=np.full(n, -1, dtype=np.int64),
            obs=np.asarray(obs, dtype=DTYPE),
        )


def epsilon_at(step: int, total_steps: int, hp: HyperParams) -> float:
    """Linear decay from epsilon_start to epsilon_end over the first decay fraction of training"""
    decay_steps = max(1.0, hp.epsilon_decay_fraction * total_steps)
    fraction = min(1.0, step / decay_steps)
    return hp.epsilon_start + fraction * (hp.epsilon_end - hp.epsilon_start)


def rollout_step(
    env: MultiAgentEnv,
    nets: AgentNetworks,
    epsilon: float,
    carry: Carry,
    rng: np.random.Generator,
) -> tuple[JointTransition, Carry, StepResult]:
    """
    One epsilon-greedy joint step.

    Both the exploration coin and the random action are drawn for every
    agent on every call, so the RNG stream does not depend on epsilon.
    """
    q, _ = q_forward(nets, nets.vfn, carry.obs, carry.prev_obs, carry.prev_q, carry.prev_actions)
    explore = rng.random(env.num_agents) < epsilon
    random_actions = rng.integers(0, env.action_size, size=env.num_agents)
    actions = np.where(explore, random_actions, greedy_actions(q)).astype(np.int64)

    t = env.t
    result = env.step(actions)
    transition = JointTransition(
        t=t,
        prev_obs=carry.prev_obs,
        prev_q=carry.prev_q,
        obs=carry.obs,
        actions=actions,
        rewards=np.asarray(result.rewards, dtype=DTYPE),
        q=q,
        next_obs=np.asarray(result.observations, dtype=DTYPE),
        terminal=bool(result.done and env.terminal_on_horizon),
        prev_actions=carry.prev_actions,
    )
    new_carry = Carry(prev_obs=carry.obs, prev_q=q, prev_actions=actions, obs=transition.next_obs)
    return transition, new_carry, result


# ── Losses ──────────────────────────────────────────────────────────────────

def bellman_target(r: float, q_next_target: np.ndarray, terminal: bool, gamma: float) -> float:
    """y = r if terminal else r + gamma * max_a' Q_target(a')"""
    if terminal:
        return float(r)
    return float(r + gamma * np.max(q_next_target))


def bellman_targets(rewards: np.ndarray, q_next: np.ndarray, terminal: np.ndarray, gamma: float) -> np.ndarray:
    """Batched bellman_target: rewards [B, N], q_next [B, N, |A|], terminal [B]"""
    bootstrap = rewards + gamma * np.max(q_next, axis=-1)
    return np.where(np.asarray(terminal, dtype=bool)[:, np.newaxis], rewards, bootstrap)


def vfn_loss_and_backward(nets: AgentNetworks, batch: TransitionBatch, gamma: float) -> float:
    """
    L_VFN = mean over the batch of sum over agents of (y - Q(a|s))^2.

    Next-step predictions come from the online predictors fed the stored
    (o_t, q_t); targets come from the frozen target network. Gradients reach
    only the online VFN.
    """
    q, cache = q_forward(nets, nets.vfn, batch.obs, batch.prev_obs, batch.prev_q, batch.prev_actions)
    q_next, _ = q_forward(nets, nets.target_vfn, batch.next_obs, batch.obs, batch.q, batch.actions)
    y = bellman_targets(batch.rewards, q_next, batch.terminal, gamma)

    index = batch.actions[..., np.newaxis]
    diff = np.take_along_axis(q, index, axis=-1)[..., 0] - y
    loss = float(np.sum(diff * diff)) / batch.size

    dq = np.zeros_like(q)
    np.put_along_axis(dq, index, (2.0 * diff / batch.size)[..., np.newaxis], axis=-1)
    nets.vfn.backward(cache, dq)
    return loss


def _predictor_loss_and_backward(net: PredictorNet, nets: AgentNetworks, batch: TransitionBatch, target: np.ndarray) -> float:
    prediction, cache = net.forward(nets.topology, batch.prev_obs, batch.prev_q)
    loss, grad = squared_error(prediction, target)
    net.backward(cache, grad)
    return loss


def prn_loss_and_backward(nets: AgentNetworks, batch: TransitionBatch) -> float:
    """L_PRN = sum_i ||q_t^i - q^_t^i||^2 against the stored behavior-time q_t"""
    if nets.prn is None:
        raise ConfigurationError(f"Variant {nets.variant.value} has no PRN")
    return _predictor_loss_and_backward(nets.prn, nets, batch, batch.q)


def opn_loss_and_backward(nets: AgentNetworks, batch: TransitionBatch) -> float:
    """L_OPN = sum_i ||o_t^i - o^_t^i||^2"""
    if nets.opn is None:
        raise ConfigurationError(f"Variant {nets.variant.value} has no OPN")
    return _predictor_loss_and_backward(nets.opn, nets, batch, batch.obs)


@dataclass
class LossReport:
    vfn: float
    prn: float = 0.0
    opn: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {"loss_vfn": self.vfn, "loss_prn": self.prn, "loss_opn": self.opn, "loss_total": self.total}


def train_on_batch(nets: AgentNetworks, optimizers: Optimizers, batch: TransitionBatch, hp: HyperParams) -> LossReport:
    """Three disjoint gradient updates on one minibatch"""
    all_blocks = nets.checkpoint_blocks()
    zero_grads(all_blocks)

    report = LossReport(vfn=vfn_loss_and_backward(nets, batch, hp.gamma))
    optimizer_step(optimizers.vfn, nets.vfn.parameters())

    if nets.prn is not None:
        report.prn = prn_loss_and_backward(nets, batch)
        optimizer_step(optimizers.prn, nets.prn.parameters())
    if nets.opn is not None:
        report.opn = opn_loss_and_backward(nets, batch)
        optimizer_step(optimizers.opn, nets.opn.parameters())

    report.total = report.vfn + hp.lambda_prn * report.prn + hp.lambda_opn * report.opn
    return report


def train_step(buffer: ReplayBuffer, nets: AgentNetworks, optimizers: Optimizers, hp: HyperParams) -> Optional[LossReport]:
    """Sample a minibatch and update; a no-op while the buffer is smaller than a batch"""
    if len(buffer) < hp.batch_size:
        logger.warning(f"Replay holds {len(buffer)} records, batch needs {hp.batch_size}; skipping update")
        return None
    return train_on_batch(nets, optimizers, buffer.sample(hp.batch_size), hp)


def sync_target(nets: AgentNetworks, step: int, period: int) -> bool:
    """Copy theta into the target network when step is a multiple of period"""
    if period < 1:
        raise ConfigurationError(f"Target period must be >= 1, got {period}")
    if step % period != 0:
        return False
    copy_values(nets.vfn.parameters(), nets.target_vfn.parameters())
    logger.debug(f"Target network synced at step {step}")
    return True


# ── Evaluation ──────────────────────────────────────────────────────────────

@dataclass
class EpisodeRecord:
    actions: list[np.ndarray] = field(default_factory=list)
    rewards: list[np.ndarray] = field(default_factory=list)
    infos: list[dict] = field(default_factory=list)


def run_episode(nets: AgentNetworks, env: MultiAgentEnv, seed: int, epsilon: float = 0.0) -> EpisodeRecord:
    """Play one full episode; the action RNG only matters when epsilon > 0"""
    rng = np.random.default_rng(seed)
    carry = Carry.initial(env, env.reset(seed))
    record = EpisodeRecord()
    done = False
    while not done:
        transition, carry, result = rollout_step(env, nets, epsilon, carry, rng)
        record.actions.append(transition.actions)
        record.rewards.append(transition.rewards)
        record.infos.append(result.info)
        done = result.done
    return record


def evaluation_seeds(seed: int, episodes: int) -> list[int]:
    rng = np.random.default_rng(seed)
    return [int(s) for s in rng.integers(0, 2**31 - 1, size=episodes)]


def evaluate(
    nets: AgentNetworks,
    env: MultiAgentEnv,
    episodes: int,
    seed: int,
    on_episode: Optional[Callable[[int, EpisodeRecord], None]] = None,
) -> dict[str, float]:
    """Greedy (epsilon = 0) metrics averaged over `episodes` seeded episodes"""
    if episodes < 1:
        raise ConfigurationError(f"Evaluation needs at least one episode, got {episodes}")
    totals: dict[str, float] = {}
    for index, episode_seed in enumerate(evaluation_seeds(seed, episodes)):
        record = run_episode(nets, env, episode_seed)
        for name, value in env.episode_metrics(record.rewards, record.infos).items():
            totals[name] = totals.get(name, 0.0) + value
        if on_episode is not None:
            on_episode(index, record)
    return {name: value / episodes for name, value in totals.items()}


def derive_evaluation_seed(run_seed: int, evaluation_index: int) -> int:
    """Evaluation seed independent of the training streams"""
    return int(np.random.SeedSequence([run_seed, evaluation_index, 0xE7A1]).generate_state(1)[0])


# ── Training loop ───────────────────────────────────────────────────────────

@dataclass
class EvaluationRecord:
    step: int
    index: int
    metrics: dict[str, float]


@dataclass
class TrainingResult:
    seed: int
    evaluations: list[EvaluationRecord] = field(default_factory=list)
    losses: list[tuple[int, LossReport]] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def final_metrics(self) -> dict[str, float]:
        return self.evaluations[-1].metrics if self.evaluations else {}


class Trainer:
    """
    One training run for one seed.

    Owns the environment, networks, optimizers and replay buffer; nothing
    is shared with other runs. Network init, exploration, replay sampling
    and training episode seeds use independent streams spawned from the run
    seed.
    """

    def __init__(self, config: RunConfig, seed: int):
        self.config = config
        self.seed = seed
        self.hp = config.hyper
        net_seed, explore_seed, replay_seed, episode_seed = np.random.SeedSequence(seed).spawn(4)

        self.env = make_env(config.env)
        self.eval_env = make_env(config.env)
        self.nets = build_networks(config.variant, self.env, config.network, net_seed)
        self.optimizers = build_optimizers(self.nets, self.hp)
        self.buffer = ReplayBuffer(self.hp.buffer_capacity, replay_seed)
        self._explore_rng = np.random.default_rng(explore_seed)
        self._episode_rng = np.random.default_rng(episode_seed)
        self.step = 0

    def evaluate(
        self,
        evaluation_index: int,
        on_episode: Optional[Callable[[int, EpisodeRecord], None]] = None,
    ) -> dict[str, float]:
        seed = derive_evaluation_seed(self.seed, evaluation_index)
        return evaluate(self.nets, self.eval_env, self.config.eval_episodes, seed, on_episode)

    def _new_episode(self) -> Carry:
        episode_seed = int(self._episode_rng.integers(0, 2**31 - 1))
        return Carry.initial(self.env, self.env.reset(episode_seed))

    def run(
        self,
        on_evaluation: Optional[Callable[[EvaluationRecord], None]] = None,
        on_episode: Optional[Callable[[int, EpisodeRecord], None]] = None,
    ) -> TrainingResult:
        """
        Train for config.training_steps environment steps.

        Evaluates at step 0, every eval_every steps and at the last step.
        `on_episode` sees every evaluation episode of the final evaluation.
        """
        total = self.config.training_steps
        result = TrainingResult(seed=self.seed)
        started = time.perf_counter()

        def record_evaluation(final: bool) -> None:
            index = len(result.evaluations)
            metrics = self.evaluate(index, on_episode if final else None)
            evaluation = EvaluationRecord(step=self.step, index=index, metrics=metrics)
            result.evaluations.append(evaluation)
            logger.info(f"seed={self.seed} step={self.step} eval: {metrics}")
            if on_evaluation is not None:
                on_evaluation(evaluation)

        logger.info(f"Training {self.config.variant.value} on {self.config.env.name} seed={self.seed} for {total} steps")
        carry = self._new_episode()
        record_evaluation(final=total == 0)

        for step in range(1, total + 1):
            self.step = step
            epsilon = epsilon_at(step - 1, total, self.hp)
            transition, carry, step_result = rollout_step(self.env, self.nets, epsilon, carry, self._explore_rng)
            self.buffer.add(transition)
            if step_result.done:
                carry = self._new_episode()

            if step % self.hp.train_every == 0 and len(self.buffer) >= self.hp.batch_size:
                report = train_step(self.buffer, self.nets, self.optimizers, self.hp)
                result.losses.append((step, report))
            sync_target(self.nets, step, self.hp.target_period)

            if step % self.config.eval_every == 0 or step == total:
                record_evaluation(final=step == total)

        result.wall_time = time.perf_counter() - started
        return result
