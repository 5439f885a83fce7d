"""
TrafficGridLite Trajectory Dump
Plays one episode of the queueing grid and writes plot-ready CSV

Actions come from a trained checkpoint when one is given, otherwise from a
fixed-time plan that cycles through the five phases.

Usage:
    python scripts/simulate_traffic.py --seed 7 --out trajectory.csv
    python scripts/simulate_traffic.py --config configs/traffic_full.json \
        --checkpoint results/traffic-full-<hash>/seed-1/checkpoint --out trajectory.csv
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

# Add parent to path
sys.path.insert(0, str(Path(__file__).parent.parent))

import config
from envs import TrafficGridLite
from envs.traffic import PHASES
from experiments.results import TRAJECTORY_COLUMNS, trajectory_rows, write_csv
from models import TrafficConfig, load_run_config
from nn.checkpoint import load_checkpoint
from training.trainer import EpisodeRecord, build_networks, run_episode

logger = logging.getLogger("simulate_traffic")


def fixed_time_episode(env: TrafficGridLite, seed: int, green_steps: int) -> EpisodeRecord:
    """Every intersection holds each phase for `green_steps` steps, in phase order"""
    env.reset(seed)
    record = EpisodeRecord()
    done = False
    while not done:
        phase = (env.t // green_steps) % len(PHASES)
        actions = np.full(env.num_agents, phase, dtype=np.int64)
        result = env.step(actions)
        record.actions.append(actions)
        record.rewards.append(result.rewards)
        record.infos.append(result.info)
        done = result.done
    return record


def main() -> None:
    parser = argparse.ArgumentParser(description="Dump one TrafficGridLite episode as CSV")
    parser.add_argument("--config", help="Run config (traffic env) to take the grid and flows from")
    parser.add_argument("--checkpoint", help="Checkpoint directory; requires --config")
    parser.add_argument("--seed", type=int, default=0, help="Episode seed")
    parser.add_argument("--green-steps", type=int, default=6, help="Fixed-time plan: steps per phase")
    parser.add_argument("--out", default="trajectory.csv", help="Output CSV path")
    args = parser.parse_args()

    logging.basicConfig(level=config.LOG_LEVEL, format=config.LOG_FORMAT, datefmt=config.LOG_DATEFMT)

    run_config = load_run_config(args.config) if args.config else None
    if run_config is not None and not isinstance(run_config.env, TrafficConfig):
        print(f"Config {args.config} does not describe a traffic environment", file=sys.stderr)
        sys.exit(2)
    env = TrafficGridLite(run_config.env if run_config else TrafficConfig())
    config_hash = run_config.config_hash() if run_config else "fixed-time"

    if args.checkpoint:
        if run_config is None:
            print("--checkpoint needs --config", file=sys.stderr)
            sys.exit(2)
        nets = build_networks(run_config.variant, env, run_config.network, 0)
        load_checkpoint(Path(args.checkpoint), nets.checkpoint_blocks())
        record = run_episode(nets, env, args.seed)
    else:
        record = fixed_time_episode(env, args.seed, args.green_steps)

    path = write_csv(Path(args.out), TRAJECTORY_COLUMNS, trajectory_rows(record, config_hash, args.seed))
    logger.info(f"Trajectory for seed {args.seed} ({config_hash}) written to {path}")
    metrics = env.episode_metrics(record.rewards, record.infos)
    print(f"Wrote {len(record.actions)} steps x {env.num_agents} agents to {path}")
    for name, value in sorted(metrics.items()):
        print(f"  {name}: {value:.4f}")


if __name__ == "__main__":
    main()
