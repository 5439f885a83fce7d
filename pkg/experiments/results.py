"""
Result writers

metrics.csv     one row per (evaluation, metric), no timestamps so reruns
                are byte-identical
summary.json    per-seed and per-run summaries
trajectory.csv  one row per (step, agent) of a dumped evaluation episode

Every file carries the config hash and the seed.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Iterable, Optional

from training.trainer import EpisodeRecord

logger = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "run_id",       # <config name>-<config hash>
    "config_hash",
    "seed",
    "step",         # training steps completed at evaluation time
    "metric",
    "value",
]

TRAJECTORY_COLUMNS = [
    "config_hash",
    "seed",
    "episode",
    "step",
    "agent",
    "action",
    "reward",
    "queue_total",  # vehicles queued at the intersection; blank for SyncGrid
]


def metric_rows(run_id: str, config_hash: str, seed: int, step: int, metrics: dict[str, float]) -> list[dict]:
    """Rows in metric-name order so files are stable across runs"""
    return [
        {"run_id": run_id, "config_hash": config_hash, "seed": seed, "step": step,
         "metric": name, "value": repr(float(metrics[name]))}
        for name in sorted(metrics)
    ]


def trajectory_rows(record: EpisodeRecord, config_hash: str, seed: int, episode: int = 0) -> list[dict]:
    rows = []
    for step, (actions, rewards, info) in enumerate(zip(record.actions, record.rewards, record.infos)):
        totals = info.get("queue_totals")
        for agent, (action, reward) in enumerate(zip(actions, rewards)):
            rows.append({
                "config_hash": config_hash,
                "seed": seed,
                "episode": episode,
                "step": step,
                "agent": agent,
                "action": int(action),
                "reward": repr(float(reward)),
                "queue_total": totals[agent] if totals is not None else "",
            })
    return rows


def write_csv(path: Path, columns: list[str], rows: Iterable[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
    return path


def read_metric_rows(path: Path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_summary(path: Path, summary: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")
    logger.info(f"Summary written to {path}")
    return path


def read_summary(path: Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def final_metric(summary: dict, metric: str) -> Optional[dict]:
    """{mean, stderr, n} of `metric` in a run summary, None when absent"""
    return summary.get("final", {}).get(metric)
