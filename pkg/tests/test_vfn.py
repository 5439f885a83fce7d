"""
Unit tests for the value function network and its ablation variants
"""

import logging

import numpy as np
import pytest

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

from agents.mean_field import neighbor_mean
from agents.vfn import (
    VfnNet,
    dqn_input_size,
    greedy_action,
    greedy_actions,
    mean_field_estimate,
    q_values,
    state_estimate,
)
from comm.topology import AgentTopology
from errors import ConfigurationError, UsageError
from models import AgentVariant, NetworkSizes
from nn.core import parameter_count
from nn.gradcheck import grad_check

SIZES = NetworkSizes(encoder_hidden=[4], dqn_hidden=[6], dccp_kernels=2, dccp_kernel_size=3)


def make_vfn(variant: AgentVariant, topology: AgentTopology, obs_size: int = 2, action_size: int = 3, seed: int = 0):
    return VfnNet.create(variant, topology.num_agents, obs_size, action_size, SIZES, np.random.default_rng(seed))


def variant_inputs(variant: AgentVariant, n: int, rng: np.random.Generator, batch: tuple = ()) -> dict:
    inputs = {"obs": rng.normal(size=(*batch, n, 2))}
    if variant in (AgentVariant.FULL, AgentVariant.DCCP_ONLY):
        inputs["o_hat"] = rng.normal(size=(*batch, n, 2))
    if variant is AgentVariant.FULL:
        inputs["q_hat"] = rng.normal(size=(*batch, n, 3))
    if variant is AgentVariant.MFQ:
        inputs["mean_actions"] = np.full((*batch, n, 3), 1 / 3)
    return inputs


def test_dqn_input_sizes():
    """Test each variant's head input width"""
    assert dqn_input_size(AgentVariant.FULL, 12, 5) == 29
    assert dqn_input_size(AgentVariant.DCCP_ONLY, 12, 5) == 24
    assert dqn_input_size(AgentVariant.IQL, 12, 5) == 12
    assert dqn_input_size(AgentVariant.MFQ, 12, 5) == 17


def test_variant_branches():
    """Test which communication branches each variant owns"""
    topology = AgentTopology.full_grid(2, 2)
    full = make_vfn(AgentVariant.FULL, topology)
    dccp_only = make_vfn(AgentVariant.DCCP_ONLY, topology)
    iql = make_vfn(AgentVariant.IQL, topology)
    mfq = make_vfn(AgentVariant.MFQ, topology)

    assert full.se_comm is not None and full.me_comm is not None
    assert dccp_only.se_comm is not None and dccp_only.me_comm is None
    assert iql.se_comm is None and iql.me_comm is None
    assert mfq.se_comm is None and mfq.me_comm is None
    assert [b.name for b in full.parameters()][0] == "vfn.se.kernels"
    assert full.me_comm.agent_weights.shape == (4, 3, 2)


@pytest.mark.parametrize("variant", list(AgentVariant))
def test_forward_shapes(variant):
    """Test every variant yields [N, |A|] and [B, N, |A|] Q-values"""
    rng = np.random.default_rng(1)
    topology = AgentTopology.full_grid(2, 3)
    net = make_vfn(variant, topology)

    q, _ = net.forward(topology, **variant_inputs(variant, 6, rng))
    qb, _ = net.forward(topology, **variant_inputs(variant, 6, rng, batch=(4,)))

    assert q.shape == (6, 3)
    assert qb.shape == (4, 6, 3)


def test_missing_inputs_rejected():
    """Test a variant refuses to run without the predictions it consumes"""
    rng = np.random.default_rng(2)
    topology = AgentTopology.full_grid(2, 2)
    obs = rng.normal(size=(4, 2))

    with pytest.raises(ConfigurationError):
        make_vfn(AgentVariant.FULL, topology).forward(topology, obs, o_hat=obs)
    with pytest.raises(ConfigurationError):
        make_vfn(AgentVariant.DCCP_ONLY, topology).forward(topology, obs)
    with pytest.raises(ConfigurationError):
        make_vfn(AgentVariant.MFQ, topology).forward(topology, obs)
    with pytest.raises(ConfigurationError):
        make_vfn(AgentVariant.IQL, topology).forward(topology, obs, mean_actions=np.zeros((4, 3)))


def test_iql_is_independent_per_agent():
    """Test the shared head gives equal rows for equal observations"""
    topology = AgentTopology.full_grid(1, 3)
    net = make_vfn(AgentVariant.IQL, topology)
    obs = np.array([[0.4, -1.0], [0.4, -1.0], [2.0, 0.0]])

    q, _ = net.forward(topology, obs)

    np.testing.assert_array_equal(q[0], q[1])


def test_zero_compensation_is_plain_neighbor_mean():
    """Test zero DCCP_ME weights reduce q~ to the neighbor mean of q^"""
    rng = np.random.default_rng(3)
    topology = AgentTopology.full_grid(3, 3)
    net = make_vfn(AgentVariant.FULL, topology)
    net.me_comm.agent_weights.values.fill(0.0)
    q_hat = rng.normal(size=(9, 3))

    np.testing.assert_array_equal(mean_field_estimate(net, topology, q_hat), neighbor_mean(topology, q_hat))


def test_state_estimate_needs_branch():
    """Test variants without DCCP_SE cannot estimate the state"""
    topology = AgentTopology.full_grid(2, 2)
    full = make_vfn(AgentVariant.FULL, topology)

    assert state_estimate(full, topology, np.zeros((4, 2))).shape == (4, 2)
    with pytest.raises(ConfigurationError):
        state_estimate(make_vfn(AgentVariant.IQL, topology), topology, np.zeros((4, 2)))
    with pytest.raises(ConfigurationError):
        mean_field_estimate(make_vfn(AgentVariant.DCCP_ONLY, topology), topology, np.zeros((4, 3)))


def test_isolated_agents_warn_once(caplog):
    """Test isolated agents are flagged a single time"""
    topology = AgentTopology(1, 5, [(0, 0), (0, 4)])
    net = make_vfn(AgentVariant.FULL, topology)
    rng = np.random.default_rng(4)

    with caplog.at_level(logging.WARNING):
        for _ in range(3):
            net.forward(topology, **variant_inputs(AgentVariant.FULL, 2, rng))

    assert sum("no neighbors" in record.message for record in caplog.records) == 1


def test_backward_without_cache():
    """Test backward before forward is a usage error"""
    topology = AgentTopology.full_grid(1, 1)
    with pytest.raises(UsageError):
        make_vfn(AgentVariant.IQL, topology).backward(None, np.zeros((1, 3)))


@pytest.mark.parametrize("variant", list(AgentVariant))
def test_gradients_match_finite_differences(variant):
    """Test head and DCCP gradients for every variant"""
    rng = np.random.default_rng(5)
    topology = AgentTopology.full_grid(2, 2)
    net = make_vfn(variant, topology)
    for comm in (net.se_comm, net.me_comm):
        if comm is not None:
            comm.agent_weights.values[...] = rng.normal(size=comm.agent_weights.shape)
    inputs = variant_inputs(variant, 4, rng, batch=(2,))
    cotangent = rng.normal(size=(2, 4, 3))

    def f() -> float:
        q, cache = net.forward(topology, **inputs)
        net.backward(cache, cotangent)
        return float(np.sum(q * cotangent))

    report = grad_check(f, net.parameters())

    assert report.passed, report.per_block


def test_greedy_action_ties_and_mask():
    """Test lowest-index tie-breaking and masking"""
    q = np.array([0.2, 0.7, 0.7, -1.0])

    assert greedy_action(q) == 1
    assert greedy_action(q, np.array([True, False, True, True])) == 2
    assert greedy_action(q, np.array([True, False, False, True])) == 0


def test_greedy_action_mask_errors():
    """Test an all-false or misshaped mask is rejected"""
    q = np.zeros(3)
    with pytest.raises(UsageError):
        greedy_action(q, np.zeros(3, dtype=bool))
    with pytest.raises(ConfigurationError):
        greedy_action(q, np.ones(2, dtype=bool))


def test_greedy_actions_rowwise():
    """Test the vectorized argmax over agents"""
    q = np.array([[1.0, 0.0], [0.5, 0.5], [-1.0, 2.0]])
    np.testing.assert_array_equal(greedy_actions(q), [0, 0, 1])


def test_greedy_action_ignores_constant_shift():
    """Test adding a constant to every unmasked entry keeps the choice"""
    rng = np.random.default_rng(6)
    for _ in range(100):
        q = rng.normal(size=5)
        mask = rng.random(5) < 0.7
        mask[rng.integers(5)] = True
        shift = rng.normal(scale=100.0)

        assert greedy_action(np.where(mask, q + shift, q), mask) == greedy_action(q, mask)
        assert greedy_action(q + shift) == greedy_action(q)


# ── Structural reductions ───────────────────────────────────────────────────

def zero_comm(net: VfnNet) -> None:
    for comm in (net.se_comm, net.me_comm):
        if comm is not None:
            for block in comm.parameters():
                block.values.fill(0.0)


def embed_head(source: VfnNet, target: VfnNet) -> None:
    """Copy source's head into target, zeroing the input columns source lacks"""
    first_source, first_target = source.dqn.layers[0], target.dqn.layers[0]
    width = first_source.in_features
    first_target.weight.values.fill(0.0)
    first_target.weight.values[:, :width] = first_source.weight.values
    first_target.bias.values[...] = first_source.bias.values
    for src, dst in zip(source.dqn.layers[1:], target.dqn.layers[1:]):
        dst.weight.values[...] = src.weight.values
        dst.bias.values[...] = src.bias.values


def test_full_without_communication_reduces_to_iql():
    """Test FULL with zeroed communication and matching head weights equals IQL"""
    rng = np.random.default_rng(7)
    topology = AgentTopology.full_grid(3, 3)
    iql = make_vfn(AgentVariant.IQL, topology, seed=1)
    full = make_vfn(AgentVariant.FULL, topology, seed=2)
    zero_comm(full)
    embed_head(iql, full)
    inputs = variant_inputs(AgentVariant.FULL, 9, rng)

    q_full, _ = full.forward(topology, **inputs)
    q_iql, _ = iql.forward(topology, inputs["obs"])

    np.testing.assert_allclose(q_full, q_iql, rtol=0, atol=1e-12)


def test_full_subsumes_dccp_only():
    """Test FULL equals DCCP_ONLY when the q~ input weights are zero"""
    rng = np.random.default_rng(8)
    topology = AgentTopology.full_grid(2, 3)
    dccp_only = make_vfn(AgentVariant.DCCP_ONLY, topology, seed=1)
    full = make_vfn(AgentVariant.FULL, topology, seed=2)
    for src, dst in zip(dccp_only.se_comm.parameters(), full.se_comm.parameters()):
        dst.values[...] = src.values
    embed_head(dccp_only, full)
    inputs = variant_inputs(AgentVariant.FULL, 6, rng)

    q_full, _ = full.forward(topology, **inputs)
    q_dccp, _ = dccp_only.forward(topology, inputs["obs"], o_hat=inputs["o_hat"])

    np.testing.assert_allclose(q_full, q_dccp, rtol=0, atol=1e-12)


@pytest.mark.parametrize("variant", list(AgentVariant))
def test_zero_head_weights_return_output_bias(variant):
    """Test q = b for every agent when every head weight is zero"""
    rng = np.random.default_rng(9)
    net = make_vfn(variant, AgentTopology.full_grid(2, 2))
    for layer in net.dqn.layers:
        layer.weight.values.fill(0.0)
    bias = net.dqn.layers[-1].bias.values
    obs = rng.normal(size=(4, 2))
    extra = {
        AgentVariant.FULL: {"s_tilde": rng.normal(size=(4, 2)), "q_tilde": rng.normal(size=(4, 3))},
        AgentVariant.DCCP_ONLY: {"s_tilde": rng.normal(size=(4, 2))},
        AgentVariant.IQL: {},
        AgentVariant.MFQ: {"aux": np.full((4, 3), 1 / 3)},
    }[variant]

    q, _ = q_values(net, obs, **extra)

    np.testing.assert_array_equal(q, np.tile(bias, (4, 1)))


def test_state_estimate_zero_and_delta_kernels():
    """Test zero SE weights give s~ = 0 and a centre-delta kernel gives s~ = o^"""
    rng = np.random.default_rng(10)
    topology = AgentTopology.full_grid(3, 3)
    net = make_vfn(AgentVariant.DCCP_ONLY, topology)
    o_hat = rng.normal(size=(9, 2))

    net.se_comm.agent_weights.values.fill(0.0)
    assert not state_estimate(net, topology, o_hat).any()

    net.se_comm.kernels.values.fill(0.0)
    net.se_comm.kernels.values[:, 0, 1, 1] = 1.0
    net.se_comm.agent_weights.values[:, :, 0] = 1.0
    np.testing.assert_array_equal(state_estimate(net, topology, o_hat), o_hat)


@pytest.mark.parametrize("variant", list(AgentVariant))
def test_parameter_count_closed_form(variant):
    """Test each variant's size against its closed-form count"""
    n, d_o, n_a = 6, 12, 5
    k, side = SIZES.dccp_kernels, SIZES.dccp_kernel_size
    net = VfnNet.create(variant, n, d_o, n_a, SIZES, np.random.default_rng(0))

    def dccp(channels: int) -> int:
        return channels * k * side * side + n * channels * k

    width_in = {AgentVariant.FULL: 29, AgentVariant.DCCP_ONLY: 24, AgentVariant.IQL: 12, AgentVariant.MFQ: 17}[variant]
    hidden = SIZES.dqn_hidden[0]
    head = (width_in + 1) * hidden + (hidden + 1) * n_a
    comm = {
        AgentVariant.FULL: dccp(d_o) + dccp(n_a),
        AgentVariant.DCCP_ONLY: dccp(d_o),
        AgentVariant.IQL: 0,
        AgentVariant.MFQ: 0,
    }[variant]

    assert parameter_count(net.parameters()) == head + comm
