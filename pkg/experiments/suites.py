"""
Numerical acceptance suites run by the `gradcheck` and `oracle` CLI verbs

Each check returns a SuiteResult; a check that raises is reported as
failed with the exception text instead of aborting the suite.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

import config
from agents.mean_field import (
    QuadraticQ,
    mean_action,
    neighbor_mean,
    one_hot,
    remainder_bound_check,
)
from agents.vfn import VfnNet, mean_field_estimate
from comm.dccp import DccpParams, dccp_backward, dccp_forward
from comm.topology import AgentTopology
from envs import MultiAgentEnv, SyncGrid, TrafficGridLite
from experiments.oracles import (
    dccp_oracle,
    dense_oracle,
    mean_action_oracle,
    neighbor_mean_oracle,
    parity_oracle,
    traffic_reward_oracle,
)
from models import AgentVariant, NetworkSizes, SyncGridConfig, TrafficConfig
from nn.core import Activation, DenseLayer, ParameterBlock, dense_backward, dense_forward
from nn.gradcheck import grad_check
from training.replay import TransitionBatch
from training.trainer import (
    AgentNetworks,
    build_networks,
    opn_loss_and_backward,
    prn_loss_and_backward,
    vfn_loss_and_backward,
)

logger = logging.getLogger(__name__)

# Small widths keep the finite-difference sweep fast
GRADCHECK_SIZES = NetworkSizes(encoder_hidden=[6], dqn_hidden=[8, 8], dccp_kernels=2, dccp_kernel_size=3)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _run_check(name: str, check: Callable[[], tuple[bool, str]]) -> SuiteResult:
    started = time.perf_counter()
    try:
        passed, detail = check()
    except Exception as e:
        passed, detail = False, f"{type(e).__name__}: {e}"
    result = SuiteResult(name, passed, detail, time.perf_counter() - started)
    log = logger.info if passed else logger.error
    log(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail} ({result.seconds:.2f}s)")
    return result


def random_batch(env: MultiAgentEnv, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
    """Synthetic minibatch with continuous values (away from relu kinks with probability 1)"""
    n, d_o, n_a = env.num_agents, env.obs_size, env.action_size
    return TransitionBatch(
        prev_obs=rng.normal(size=(batch_size, n, d_o)),
        prev_q=rng.normal(size=(batch_size, n, n_a)),
        obs=rng.normal(size=(batch_size, n, d_o)),
        actions=rng.integers(0, n_a, size=(batch_size, n)),
        rewards=rng.normal(size=(batch_size, n)),
        q=rng.normal(size=(batch_size, n, n_a)),
        next_obs=rng.normal(size=(batch_size, n, d_o)),
        terminal=rng.random(batch_size) < 0.3,
        prev_actions=rng.integers(-1, n_a, size=(batch_size, n)),
    )


def gradcheck_fixture(variant: AgentVariant, seed: int = 0) -> tuple[AgentNetworks, TransitionBatch]:
    env = SyncGrid(SyncGridConfig(grid_height=3, grid_width=3))
    nets = build_networks(variant, env, GRADCHECK_SIZES, seed)
    rng = np.random.default_rng(seed + 1)
    # a target that differs from the online net exercises the bootstrap term
    for block in nets.target_vfn.parameters():
        block.values += rng.normal(scale=0.1, size=block.shape)
    return nets, random_batch(env, 3, rng)


# ── Gradient suite ──────────────────────────────────────────────────────────

def _check_dense(rng: np.random.Generator) -> tuple[bool, str]:
    worst = 0.0
    for activation in (Activation.IDENTITY, Activation.RELU):
        layer = DenseLayer.create("dense", 5, 4, activation, rng)
        x = ParameterBlock.uniform("x", (3, 5), 1.0, rng)
        cotangent = rng.normal(size=(3, 4))

        def f() -> float:
            y, cache = dense_forward(layer, x.values)
            x.grads += dense_backward(layer, cache, cotangent)
            return float(np.sum(y * cotangent))

        report = grad_check(f, layer.parameters() + [x], config.GRADCHECK_TOLERANCE, config.GRADCHECK_STEP)
        worst = max(worst, report.max_rel_error)
    return worst < config.GRADCHECK_TOLERANCE, f"max rel err {worst:.2e}"


def _check_dccp(rng: np.random.Generator) -> tuple[bool, str]:
    topology = AgentTopology.full_grid(3, 3)
    params = DccpParams.create("dccp", topology.num_agents, 3, 2, 3, rng)
    params.agent_weights.values[...] = rng.normal(size=params.agent_weights.shape)
    x = ParameterBlock.uniform("inputs", (2, topology.num_agents, 3), 1.0, rng)
    cotangent = rng.normal(size=x.shape)

    def f() -> float:
        z, cache = dccp_forward(params, topology, x.values)
        x.grads += dccp_backward(params, cache, cotangent)
        return float(np.sum(z * cotangent))

    report = grad_check(f, params.parameters() + [x], config.GRADCHECK_TOLERANCE, config.GRADCHECK_STEP)
    return report.passed, f"max rel err {report.max_rel_error:.2e} over {report.checked_entries} entries"


def _check_predictor(which: str) -> tuple[bool, str]:
    nets, batch = gradcheck_fixture(AgentVariant.FULL)
    net = nets.prn if which == "prn" else nets.opn
    loss = prn_loss_and_backward if which == "prn" else opn_loss_and_backward
    report = grad_check(lambda: loss(nets, batch), net.parameters(),
                        config.GRADCHECK_TOLERANCE, config.GRADCHECK_STEP)
    return report.passed, f"max rel err {report.max_rel_error:.2e} over {report.checked_entries} entries"


def _check_vfn(variant: AgentVariant) -> tuple[bool, str]:
    nets, batch = gradcheck_fixture(variant)
    report = grad_check(lambda: vfn_loss_and_backward(nets, batch, 0.9), nets.vfn.parameters(),
                        config.GRADCHECK_TOLERANCE, config.GRADCHECK_STEP)
    return report.passed, f"max rel err {report.max_rel_error:.2e} over {report.checked_entries} entries"


def run_gradcheck_suite(seed: int = 0) -> list[SuiteResult]:
    """Analytic vs central finite-difference gradients for every differentiable path"""
    rng = np.random.default_rng(seed)
    results = [
        _run_check("dense layer", lambda: _check_dense(rng)),
        _run_check("dccp forward", lambda: _check_dccp(rng)),
        _run_check("prn loss", lambda: _check_predictor("prn")),
        _run_check("opn loss", lambda: _check_predictor("opn")),
    ]
    for variant in AgentVariant:
        results.append(_run_check(f"vfn bellman loss ({variant.value})", lambda v=variant: _check_vfn(v)))
    return results


# ── Oracle suite ────────────────────────────────────────────────────────────

def random_topology(rng: np.random.Generator, max_side: int = 4) -> AgentTopology:
    """Random grid with a random non-empty subset of occupied cells"""
    height, width = (int(v) for v in rng.integers(1, max_side + 1, size=2))
    cells = [(r, c) for r in range(height) for c in range(width)]
    count = int(rng.integers(1, len(cells) + 1))
    chosen = sorted(rng.choice(len(cells), size=count, replace=False).tolist())
    neighborhood = int(rng.choice([1, 3, 5]))
    return AgentTopology(height, width, [cells[i] for i in chosen], neighborhood)


def _check_dccp_oracle(rng: np.random.Generator, fixtures: int = 200) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(fixtures):
        topology = random_topology(rng)
        channels = int(rng.integers(1, 6))
        kernel_count = int(rng.integers(1, 5))
        kernel_size = int(rng.choice([1, 3, 5]))
        params = DccpParams.create("dccp", topology.num_agents, channels, kernel_count, kernel_size, rng)
        params.agent_weights.values[...] = rng.normal(size=params.agent_weights.shape)
        inputs = rng.normal(size=(topology.num_agents, channels))
        z, _ = dccp_forward(params, topology, inputs)
        expected = dccp_oracle(params.kernels.values, params.agent_weights.values, topology, inputs)
        worst = max(worst, float(np.max(np.abs(z - expected))))
    return worst <= config.ORACLE_TOLERANCE, f"{fixtures} fixtures, max abs diff {worst:.2e}"


def _check_dense_oracle(rng: np.random.Generator, fixtures: int = 50) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(fixtures):
        fan_in, fan_out = (int(v) for v in rng.integers(1, 9, size=2))
        activation = Activation.RELU if rng.random() < 0.5 else Activation.IDENTITY
        layer = DenseLayer.create("dense", fan_in, fan_out, activation, rng)
        x = rng.normal(size=fan_in)
        y, _ = dense_forward(layer, x)
        expected = dense_oracle(layer.weight.values, layer.bias.values, x, activation is Activation.RELU)
        worst = max(worst, float(np.max(np.abs(y - expected))))
    return worst <= config.ORACLE_TOLERANCE, f"{fixtures} fixtures, max abs diff {worst:.2e}"


def _check_mean_action(rng: np.random.Generator, cases: int = 1000) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(cases):
        num_actions = int(rng.integers(1, 7))
        count = int(rng.integers(1, 9))
        actions = [one_hot(int(a), num_actions) for a in rng.integers(0, num_actions, size=count)]
        result = mean_action(actions, num_actions)
        worst = max(worst, float(np.max(np.abs(result.values - mean_action_oracle(actions)))))
    return worst <= config.ORACLE_TOLERANCE, f"{cases} cases, max abs diff {worst:.2e}"


def _check_neighbor_mean(rng: np.random.Generator, fixtures: int = 100) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(fixtures):
        topology = random_topology(rng)
        values = rng.normal(size=(topology.num_agents, 3))
        worst = max(worst, float(np.max(np.abs(neighbor_mean(topology, values) - neighbor_mean_oracle(topology, values)))))
    return worst <= config.ORACLE_TOLERANCE, f"{fixtures} fixtures, max abs diff {worst:.2e}"


def _check_zero_compensation(rng: np.random.Generator) -> tuple[bool, str]:
    topology = AgentTopology.full_grid(3, 3)
    net = VfnNet.create(AgentVariant.FULL, topology.num_agents, 2, 4, NetworkSizes(), rng)
    net.me_comm.kernels.values.fill(0.0)
    q_hat = rng.normal(size=(topology.num_agents, 4))
    diff = float(np.max(np.abs(mean_field_estimate(net, topology, q_hat) - neighbor_mean_oracle(topology, q_hat))))
    return diff <= config.ORACLE_TOLERANCE, f"max abs diff {diff:.2e}"


def _check_remainder(rng: np.random.Generator, trials: int = 10_000) -> tuple[bool, str]:
    q_fn = QuadraticQ.random(5, 1.0, rng)
    report = remainder_bound_check(q_fn, trials, rng)
    corners = remainder_bound_check(QuadraticQ.random(5, 1.0, rng), trials // 10, rng, relaxed=False)
    linear = remainder_bound_check(QuadraticQ.linear(5, rng), trials // 10, rng)
    detail = (f"max |R| {max(report.max_abs_remainder, corners.max_abs_remainder):.3e} <= {report.bound:.1f}, "
              f"first-order {max(report.max_first_order, linear.max_first_order):.1e}")
    return True, detail


def _check_traffic_rewards(rng: np.random.Generator, episodes: int = 3) -> tuple[bool, str]:
    env = TrafficGridLite(TrafficConfig(horizon=60))
    worst = 0.0
    for episode in range(episodes):
        env.reset(int(rng.integers(0, 2**31 - 1)))
        done = False
        while not done:
            result = env.step(rng.integers(0, env.action_size, size=env.num_agents))
            expected = traffic_reward_oracle(env.queue_lengths(), env.head_wait, env.config.delay_weight)
            worst = max(worst, float(np.max(np.abs(result.rewards - expected))))
            if env.vehicles_arrived != env.vehicles_in_queues() + env.vehicles_exited:
                return False, f"conservation broken at episode {episode} step {env.t}"
            done = result.done
    return worst == 0.0, f"{episodes} episodes, max abs diff {worst:.2e}, conservation held"


def _check_parity(rng: np.random.Generator, fixtures: int = 200) -> tuple[bool, str]:
    for _ in range(fixtures):
        height, width = (int(v) for v in rng.integers(1, 5, size=2))
        env = SyncGrid(SyncGridConfig(grid_height=height, grid_width=width))
        env.reset(int(rng.integers(0, 2**31 - 1)))
        if not np.array_equal(env.parities, parity_oracle(env.topology, env.bits)):
            return False, f"parity mismatch on {height}x{width} bits {env.bits.tolist()}"
    return True, f"{fixtures} grids"


def run_oracle_suite(seed: int = 0) -> list[SuiteResult]:
    """Vectorized code paths against brute-force loops"""
    rng = np.random.default_rng(seed)
    return [
        _run_check("dccp convolution", lambda: _check_dccp_oracle(rng)),
        _run_check("dense layer", lambda: _check_dense_oracle(rng)),
        _run_check("mean action", lambda: _check_mean_action(rng)),
        _run_check("neighbor mean", lambda: _check_neighbor_mean(rng)),
        _run_check("mean-field estimate, zero compensation", lambda: _check_zero_compensation(rng)),
        _run_check("mean-field remainder bound", lambda: _check_remainder(rng)),
        _run_check("traffic reward recompute", lambda: _check_traffic_rewards(rng)),
        _run_check("sync grid parity", lambda: _check_parity(rng)),
    ]
