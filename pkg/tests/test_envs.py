"""
Unit tests for the SyncGrid and TrafficGridLite environments
"""

import numpy as np
import pytest

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

from envs import SyncGrid, TrafficGridLite, make_env
from envs.sync_grid import own_observation_reward_bound, patch_parities
from envs.traffic import LANE_INDEX, flow_rate, lane_for, route_direction
from errors import ConfigurationError, UsageError
from experiments.oracles import parity_oracle, traffic_reward_oracle
from models import FlowSpec, OdPair, SyncGridConfig, TrafficConfig


def quiet_traffic(height: int = 1, width: int = 1, horizon: int = 10) -> TrafficGridLite:
    """Grid whose only flow never produces a vehicle"""
    pair = OdPair(origin=(0, 0), entry="W", destination=(height - 1, width - 1), exit="E")
    flow = FlowSpec(name="none", od_pairs=[pair], peak_rate=0.0, peak_step=0, ramp_steps=1)
    env = TrafficGridLite(TrafficConfig(grid_height=height, grid_width=width, horizon=horizon, flows=[flow]))
    env.reset(0)
    return env


# ── SyncGrid ────────────────────────────────────────────────────────────────

def test_syncgrid_single_agent_parity_is_own_bit():
    """Test a 1x1 grid's target is the agent's own bit"""
    env = SyncGrid(SyncGridConfig(grid_height=1, grid_width=1))
    env.reset(0)

    env.set_bits([1])
    assert env.parities.tolist() == [1]
    assert own_observation_reward_bound(env.topology).tolist() == [1.0]


def test_syncgrid_2x2_parities():
    """Test bits [1,0,0,1] on a 2x2 grid give parity 0 everywhere"""
    env = SyncGrid(SyncGridConfig(grid_height=2, grid_width=2))
    env.reset(0)

    obs = env.set_bits([1, 0, 0, 1])

    assert env.parities.tolist() == [0, 0, 0, 0]
    np.testing.assert_array_equal(obs[:, 0], [1.0, 0.0, 0.0, 1.0])
    env.set_bits([0, 0, 0, 0])
    assert env.parities.tolist() == [0, 0, 0, 0]


def test_syncgrid_parities_match_oracle():
    """Test random bits on a 3x4 grid against the XOR loop"""
    env = SyncGrid(SyncGridConfig(grid_height=3, grid_width=4))
    rng = np.random.default_rng(0)
    for _ in range(50):
        bits = rng.integers(0, 2, size=12)
        np.testing.assert_array_equal(patch_parities(env.topology, bits), parity_oracle(env.topology, bits))


def test_syncgrid_own_observation_bound():
    """Test agents with neighbors cannot beat 0.5 from their own bit"""
    env = SyncGrid(SyncGridConfig(grid_height=2, grid_width=3))
    np.testing.assert_array_equal(own_observation_reward_bound(env.topology), [0.5] * 6)


def test_syncgrid_rewards_correct_parities():
    """Test reward 1 for the right parity and 0 otherwise"""
    env = SyncGrid(SyncGridConfig(grid_height=2, grid_width=2, horizon=2))
    env.reset(0)
    env.set_bits([1, 0, 0, 0])

    result = env.step([1, 1, 0, 0])

    assert result.rewards.tolist() == [1.0, 1.0, 0.0, 0.0]
    assert result.info["correct"] == 0.5
    assert not result.done


def test_syncgrid_episode_lifecycle():
    """Test horizon termination and step-after-done rejection"""
    env = SyncGrid(SyncGridConfig(grid_height=1, grid_width=2, horizon=2))
    with pytest.raises(UsageError):
        env.step([0, 0])

    env.reset(3)
    assert not env.step([0, 0]).done
    assert env.step([0, 0]).done
    with pytest.raises(UsageError):
        env.step([0, 0])


def test_action_validation():
    """Test wrong length or out-of-range actions are rejected"""
    env = SyncGrid(SyncGridConfig(grid_height=1, grid_width=2))
    env.reset(0)
    with pytest.raises(UsageError):
        env.step([0])
    with pytest.raises(UsageError):
        env.step([0, 2])


def test_syncgrid_metrics():
    """Test the after-first-step reward excludes the first step"""
    env = SyncGrid(SyncGridConfig())
    rewards = [np.array([0.0, 0.0]), np.array([1.0, 1.0]), np.array([1.0, 0.0])]

    metrics = env.episode_metrics(rewards, [{}] * 3)

    assert metrics["mean_reward"] == pytest.approx(0.5)
    assert metrics["mean_reward_after_first"] == pytest.approx(0.75)


def test_make_env():
    """Test the factory picks the environment from the config type"""
    assert isinstance(make_env(SyncGridConfig()), SyncGrid)
    assert isinstance(make_env(TrafficConfig()), TrafficGridLite)
    with pytest.raises(TypeError):
        make_env(object())


# ── TrafficGridLite ─────────────────────────────────────────────────────────

def test_traffic_reset_observations():
    """Test empty lanes observe all zeros with 12 entries per intersection"""
    env = TrafficGridLite(TrafficConfig(grid_height=2, grid_width=3))
    obs = env.reset(0)

    assert obs.shape == (6, 12)
    assert not obs.any()
    assert env.phases.tolist() == [0] * 6


def test_flow_schedule():
    """Test the triangular arrival rate"""
    pair = OdPair(origin=(0, 0), entry="W", destination=(0, 0), exit="E")
    flow = FlowSpec(name="f", od_pairs=[pair], peak_rate=2.0, peak_step=10, ramp_steps=4, base_rate=0.5)

    assert flow_rate(flow, 10) == 2.5
    assert flow_rate(flow, 8) == 1.5
    assert flow_rate(flow, 14) == 0.5
    assert flow_rate(flow, 30) == 0.5


def test_arrival_rates_follow_default_peaks():
    """Test the main flow dominates early and the side flow later"""
    env = TrafficGridLite(TrafficConfig(horizon=100))
    early = env.arrival_rates(30)
    late = env.arrival_rates(50)

    assert early["main"] > early["side"]
    assert late["side"] > late["main"]


def test_routing_column_first():
    """Test vehicles close the column gap before the row gap"""
    vehicle = ((2, 0), "S")
    assert route_direction((0, 2), vehicle) == "W"
    assert route_direction((0, 0), vehicle) == "S"
    assert route_direction((2, 0), vehicle) == "S"


def test_lane_choice():
    """Test straight and right turns share a lane, left turns and U-turns use the other"""
    assert lane_for((0, 0), "W", ((1, 0), "S")) == LANE_INDEX["W-S"]
    assert lane_for((0, 0), "W", ((0, 0), "E")) == LANE_INDEX["W-S"]
    assert lane_for((1, 0), "W", ((0, 0), "N")) == LANE_INDEX["W-L"]
    assert lane_for((0, 0), "W", ((0, 0), "W")) == LANE_INDEX["W-L"]
    assert lane_for((0, 0), "N", ((1, 0), "S")) == LANE_INDEX["N"]


def test_single_vehicle_cleared():
    """Test one W-S vehicle under phase EW-S leaves a 1x1 grid and the reward returns to 0"""
    env = quiet_traffic()
    env.enqueue(0, "W-S", (0, 0), "E")
    assert env.rewards().tolist() == [-1.0]

    result = env.step([0])

    assert result.rewards.tolist() == [0.0]
    assert env.vehicles_exited == 1
    assert not result.observations.any()


def test_phase_switch_releases_nothing():
    """Test the step that changes phase is all-yellow"""
    env = quiet_traffic()
    env.enqueue(0, "N", (0, 0), "S")

    result = env.step([4])

    assert env.phases.tolist() == [4]
    assert env.queue_lengths()[0, LANE_INDEX["N"]] == 1
    # queue 1 plus 0.2 * wait 1
    assert result.rewards[0] == pytest.approx(-1.2)

    env.step([4])
    assert env.vehicles_in_queues() == 0


def test_reward_queue_and_wait():
    """Test a queue of 3 with head wait 5 costs 3 + 0.2 * 5 = 4"""
    env = quiet_traffic()
    for _ in range(3):
        env.enqueue(0, "E-L", (0, 0), "S")
    env.head_wait[0, LANE_INDEX["E-L"]] = 5

    assert env.rewards()[0] == pytest.approx(-4.0)
    obs = env.observations()[0]
    assert obs[2 * LANE_INDEX["E-L"]] == 5.0
    assert obs[2 * LANE_INDEX["E-L"] + 1] == 3.0


def test_saturation_limits_release():
    """Test a served lane releases at most `saturation` vehicles per step"""
    env = quiet_traffic()
    for _ in range(5):
        env.enqueue(0, "W-S", (0, 0), "E")

    env.step([0])
    assert env.vehicles_in_queues() == 3
    assert env.head_wait[0, LANE_INDEX["W-S"]] == 1


def test_vehicle_moves_one_hop():
    """Test a released vehicle joins the next intersection's lane"""
    env = quiet_traffic(1, 2)
    env.enqueue(0, "W-S", (0, 1), "E")

    env.step([0, 0])

    lengths = env.queue_lengths()
    assert lengths[0].sum() == 0
    assert lengths[1, LANE_INDEX["W-S"]] == 1

    env.step([0, 0])
    assert env.vehicles_exited == 1


def test_rewards_match_oracle_and_vehicles_conserved():
    """Test rewards against a recompute and arrived = exited + queued on random play"""
    env = TrafficGridLite(TrafficConfig(grid_height=2, grid_width=3, horizon=60))
    rng = np.random.default_rng(1)
    env.reset(5)
    done = False
    while not done:
        result = env.step(rng.integers(0, env.action_size, size=env.num_agents))
        expected = traffic_reward_oracle(env.queue_lengths(), env.head_wait, env.config.delay_weight)
        np.testing.assert_allclose(result.rewards, expected, atol=1e-12)
        assert env.vehicles_arrived == env.vehicles_exited + env.vehicles_in_queues()
        assert result.info["queue_length"] == pytest.approx(env.queue_lengths().sum() / env.num_agents)
        done = result.done
    assert env.vehicles_arrived > 0


def test_traffic_deterministic_under_seed():
    """Test equal seeds and actions give equal trajectories"""
    def play(seed: int) -> list[np.ndarray]:
        env = TrafficGridLite(TrafficConfig(grid_height=2, grid_width=2, horizon=40))
        env.reset(seed)
        actions = np.random.default_rng(0)
        return [env.step(actions.integers(0, 5, size=4)).observations for _ in range(40)]

    a, b, c = play(3), play(3), play(4)

    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


def test_traffic_episode_metrics():
    """Test averages and finals from per-step info"""
    env = quiet_traffic()
    infos = [{"queue_length": 2.0, "time_delay": 1.0}, {"queue_length": 4.0, "time_delay": 0.0}]

    metrics = env.episode_metrics([np.array([-1.0]), np.array([-3.0])], infos)

    assert metrics == {
        "mean_reward": -2.0,
        "avg_queue_len": 3.0,
        "final_queue_len": 4.0,
        "avg_time_delay": 0.5,
        "final_time_delay": 0.0,
    }


def test_traffic_is_not_terminal_at_horizon():
    """Test the time limit ends the episode without marking a terminal state"""
    env = quiet_traffic(horizon=1)
    assert env.step([0]).done
    assert not env.terminal_on_horizon


def test_enqueue_unknown_lane():
    """Test fixture setup rejects unknown lane names"""
    with pytest.raises(ConfigurationError):
        quiet_traffic().enqueue(0, "NE", (0, 0), "E")
