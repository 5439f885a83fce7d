"""
Unit tests for mean-field machinery
"""

import numpy as np
import pytest

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

from agents.mean_field import (
    QuadraticQ,
    mean_action,
    mfq_estimate_action,
    neighbor_mean,
    neighbor_mean_actions,
    one_hot,
    remainder_bound_check,
)
from comm.topology import AgentTopology
from errors import ConfigurationError, RemainderBoundViolation
from experiments.oracles import mean_action_oracle, neighbor_mean_oracle
from experiments.suites import random_topology


def test_mean_action_two_neighbors():
    """Test [[1,0,0],[0,1,0]] averages to [0.5,0.5,0]"""
    result = mean_action([np.array([1.0, 0, 0]), np.array([0, 1.0, 0])])
    np.testing.assert_array_equal(result.values, [0.5, 0.5, 0.0])
    assert not result.isolated


def test_mean_action_single_neighbor():
    """Test a single neighbor's action is returned unchanged"""
    result = mean_action([np.array([0, 0, 1.0])])
    np.testing.assert_array_equal(result.values, [0.0, 0.0, 1.0])


def test_mean_action_random_matches_brute_force():
    """Test random one-hots against the elementwise-average oracle"""
    rng = np.random.default_rng(0)
    for _ in range(100):
        actions = [one_hot(int(a), 4) for a in rng.integers(0, 4, size=5)]
        np.testing.assert_allclose(mean_action(actions).values, mean_action_oracle(actions), atol=1e-15)
        assert mean_action(actions).values.sum() == pytest.approx(1.0)


def test_mean_action_ignores_neighbor_order():
    """Test every ordering of the neighbor list gives the same mean"""
    rng = np.random.default_rng(3)
    actions = [one_hot(int(a), 3) for a in rng.integers(0, 3, size=6)]
    expected = mean_action(actions).values

    for _ in range(20):
        shuffled = [actions[i] for i in rng.permutation(len(actions))]
        np.testing.assert_array_equal(mean_action(shuffled).values, expected)


def test_mean_action_isolated_agent():
    """Test no neighbors gives the flagged uniform vector"""
    result = mean_action([], num_actions=4)

    np.testing.assert_array_equal(result.values, [0.25] * 4)
    assert result.isolated
    with pytest.raises(ConfigurationError):
        mean_action([])


def test_mean_action_rejects_non_one_hot():
    """Test soft or malformed actions are rejected"""
    with pytest.raises(ConfigurationError):
        mean_action([np.array([0.5, 0.5])])
    with pytest.raises(ConfigurationError):
        mean_action([np.array([1.0, 0.0])], num_actions=3)


def test_neighbor_mean_matches_oracle():
    """Test the matrix form against per-agent loops"""
    rng = np.random.default_rng(1)
    for _ in range(30):
        topology = random_topology(rng)
        values = rng.normal(size=(topology.num_agents, 2))
        np.testing.assert_allclose(neighbor_mean(topology, values), neighbor_mean_oracle(topology, values), atol=1e-12)


def test_neighbor_mean_batched():
    """Test a leading batch axis is carried through"""
    rng = np.random.default_rng(2)
    topology = AgentTopology.full_grid(2, 2)
    values = rng.normal(size=(3, 4, 2))

    result = neighbor_mean(topology, values)

    assert result.shape == (3, 4, 2)
    np.testing.assert_allclose(result[2], neighbor_mean(topology, values[2]))


def test_neighbor_mean_actions_start_of_episode():
    """Test -1 actions contribute zero and isolated agents get uniform"""
    topology = AgentTopology(1, 5, [(0, 0), (0, 1), (0, 4)])
    means = neighbor_mean_actions(topology, np.array([-1, 2, 0]), 3)

    np.testing.assert_array_equal(means[0], [0.0, 0.0, 1.0])
    np.testing.assert_array_equal(means[1], [0.0, 0.0, 0.0])
    np.testing.assert_allclose(means[2], [1 / 3] * 3)


def test_mfq_ignoring_mean_is_plain_greedy():
    """Test a Q-head that ignores the mean input picks its own argmax"""
    q_head = lambda obs, mean: np.array([0.1, obs[0], 0.3])
    neighbors = [one_hot(0, 3), one_hot(2, 3)]

    assert mfq_estimate_action(q_head, np.array([0.9]), neighbors, 3) == 1
    assert mfq_estimate_action(q_head, np.array([0.0]), neighbors, 3) == 2


def test_mfq_tie_breaks_to_lowest_index():
    """Test equal Q-values choose the lowest action"""
    q_head = lambda obs, mean: np.array([0.2, 0.5, 0.5])
    assert mfq_estimate_action(q_head, np.zeros(1), None, 3) == 1


def test_mfq_table_lookup():
    """Test a fixture Q-table over (obs, mean action) pairs"""
    table = {
        (0, (1.0, 0.0)): [1.0, 0.0],
        (0, (0.5, 0.5)): [0.0, 1.0],
        (1, (0.0, 1.0)): [0.3, 0.2],
        (1, (0.0, 0.0)): [0.0, 0.4],
    }
    q_head = lambda obs, mean: np.array(table[(int(obs[0]), tuple(mean.tolist()))])

    assert mfq_estimate_action(q_head, np.array([0.0]), [one_hot(0, 2)], 2) == 0
    assert mfq_estimate_action(q_head, np.array([0.0]), [one_hot(0, 2), one_hot(1, 2)], 2) == 1
    assert mfq_estimate_action(q_head, np.array([1.0]), [one_hot(1, 2)], 2) == 0
    assert mfq_estimate_action(q_head, np.array([1.0]), None, 2) == 1


def test_mfq_invariant_to_positive_affine_rescaling():
    """Test scaling Q by a > 0 and shifting by b leaves the estimate unchanged"""
    rng = np.random.default_rng(4)
    weights = rng.normal(size=(4, 1 + 4))

    def q_head(obs, mean):
        return weights @ np.concatenate([obs, mean])

    for _ in range(50):
        obs = rng.normal(size=1)
        neighbors = [one_hot(int(a), 4) for a in rng.integers(0, 4, size=3)]
        scale, shift = rng.uniform(0.1, 10.0), rng.normal(scale=5.0)
        rescaled = lambda o, m: scale * q_head(o, m) + shift

        assert mfq_estimate_action(rescaled, obs, neighbors, 4) == mfq_estimate_action(q_head, obs, neighbors, 4)


def test_mfq_checks_q_shape():
    """Test a Q-head returning the wrong length is rejected"""
    with pytest.raises(ConfigurationError):
        mfq_estimate_action(lambda obs, mean: np.zeros(2), np.zeros(1), None, 3)


def test_remainder_zero_fluctuation():
    """Test identical neighbor actions make the approximation exact"""
    rng = np.random.default_rng(3)
    q_fn = QuadraticQ.random(4, 1.0, rng)
    actions = np.tile(one_hot(2, 4), (5, 1))
    mean = actions.mean(axis=0)

    assert np.mean([q_fn.value(a) for a in actions]) == pytest.approx(q_fn.value(mean), abs=1e-14)


def test_remainder_linear_q():
    """Test a linear Q has zero remainder everywhere"""
    rng = np.random.default_rng(4)
    report = remainder_bound_check(QuadraticQ.linear(5, rng), 500, rng)

    assert report.max_abs_remainder == 0.0
    assert report.max_first_order < 1e-12


def test_remainder_random_quadratic_within_bound():
    """Test 10^4 quadratic-Q trials stay within 2 * M"""
    rng = np.random.default_rng(5)
    q_fn = QuadraticQ.random(5, 2.0, rng)

    report = remainder_bound_check(q_fn, 10_000, rng)

    assert report.trials == 10_000
    assert report.max_abs_remainder <= report.bound == 4.0
    assert report.max_first_order < 1e-12


def test_remainder_one_hot_corners():
    """Test the bound also holds for discrete one-hot neighbors"""
    rng = np.random.default_rng(6)
    report = remainder_bound_check(QuadraticQ.random(3, 1.0, rng), 1000, rng, relaxed=False)
    assert report.max_abs_remainder <= 2.0


def test_remainder_violation_reports_configuration():
    """Test an understated smoothness constant raises with the offending configuration"""
    rng = np.random.default_rng(7)
    q_fn = QuadraticQ.random(4, 1.0, rng)
    q_fn.hessian = 10.0 * np.eye(4)

    with pytest.raises(RemainderBoundViolation) as excinfo:
        remainder_bound_check(q_fn, 1000, rng, relaxed=False)

    assert "actions" in excinfo.value.configuration
