"""
Experiment runner

run(config) trains every seed (optionally in worker processes), writes
per-seed metrics/summary/checkpoint and the run-level summary that
aggregates final metrics across seeds as mean and standard error.

Layout under config.output_dir:

    <name>-<hash>/summary.json
    <name>-<hash>/metrics.csv
    <name>-<hash>/seed-<s>/{metrics.csv, summary.json, trajectory.csv, checkpoint/}
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from errors import ConfigurationError
from experiments.results import (
    METRIC_COLUMNS,
    TRAJECTORY_COLUMNS,
    metric_rows,
    trajectory_rows,
    write_csv,
    write_summary,
)
from models import SCHEMA_VERSION, RunConfig
from nn.checkpoint import load_checkpoint, read_manifest, save_checkpoint
from training.trainer import EpisodeRecord, LossReport, Trainer, TrainingResult

logger = logging.getLogger(__name__)

CONFIDENCE_Z = 1.96


def run_id(config: RunConfig) -> str:
    return f"{config.name}-{config.config_hash()}"


def run_dir(config: RunConfig) -> Path:
    return Path(config.output_dir) / run_id(config)


def seed_dir(config: RunConfig, seed: int) -> Path:
    return run_dir(config) / f"seed-{seed}"


# ── Aggregation ─────────────────────────────────────────────────────────────

def aggregate(values: Sequence[float]) -> dict:
    """Mean and standard error (sample std / sqrt(n)); stderr is 0 for a single value"""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ConfigurationError("Cannot aggregate an empty list of values")
    stderr = float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return {"mean": float(values.mean()), "stderr": stderr, "n": int(values.size)}


def _loss_means(losses: list[tuple[int, LossReport]], after: int, upto: int) -> dict[str, float]:
    window = [report.as_dict() for step, report in losses if after < step <= upto]
    if not window:
        return {}
    return {name: float(np.mean([entry[name] for entry in window])) for name in window[0]}


# ── Single seed ─────────────────────────────────────────────────────────────

def run_seed(config: RunConfig, seed: int) -> dict:
    """Train and evaluate one seed, writing its artifacts; returns the seed summary"""
    config_hash = config.config_hash()
    out = seed_dir(config, seed)
    trainer = Trainer(config, seed)

    trajectory: list[dict] = []

    def keep_last_episode(index: int, record: EpisodeRecord) -> None:
        if config.dump_trajectory and index == config.eval_episodes - 1:
            trajectory.extend(trajectory_rows(record, config_hash, seed, index))

    result: TrainingResult = trainer.run(on_episode=keep_last_episode)

    rows = []
    previous_step = 0
    for evaluation in result.evaluations:
        metrics = dict(evaluation.metrics)
        metrics.update(_loss_means(result.losses, previous_step, evaluation.step))
        rows += metric_rows(run_id(config), config_hash, seed, evaluation.step, metrics)
        previous_step = evaluation.step
    write_csv(out / "metrics.csv", METRIC_COLUMNS, rows)
    if trajectory:
        write_csv(out / "trajectory.csv", TRAJECTORY_COLUMNS, trajectory)

    final = result.evaluations[-1]
    save_checkpoint(
        out / "checkpoint",
        trainer.nets.checkpoint_blocks(),
        {
            "config_hash": config_hash,
            "seed": seed,
            "step": final.step,
            "evaluation_index": final.index,
            "variant": config.variant.value,
            "metrics": final.metrics,
        },
    )

    summary = {
        "schema_version": SCHEMA_VERSION,
        "run_id": run_id(config),
        "config_hash": config_hash,
        "seed": seed,
        "status": "complete",
        "evaluations": [{"step": e.step, "metrics": e.metrics} for e in result.evaluations],
        "final_metrics": final.metrics,
        "wall_time": result.wall_time,
    }
    write_summary(out / "summary.json", summary)
    return {**summary, "metric_rows": rows}


# ── Whole run ───────────────────────────────────────────────────────────────

def run(config: RunConfig, workers: int = 1) -> dict:
    """
    Run every seed of `config` and aggregate.

    A seed that raises is recorded under failed_seeds and the run summary is
    marked partial; the remaining seeds still complete.
    """
    logger.info(f"Run {run_id(config)}: {len(config.seeds)} seed(s), {workers} worker(s)")
    outcomes: dict[int, dict] = {}
    failures: dict[int, str] = {}

    if workers > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {seed: pool.submit(run_seed, config, seed) for seed in config.seeds}
            for seed, future in futures.items():
                try:
                    outcomes[seed] = future.result()
                except Exception as e:
                    logger.error(f"Seed {seed} failed: {e}")
                    failures[seed] = repr(e)
    else:
        for seed in config.seeds:
            try:
                outcomes[seed] = run_seed(config, seed)
            except Exception as e:
                logger.error(f"Seed {seed} failed: {e}")
                failures[seed] = repr(e)

    completed = [outcomes[seed] for seed in config.seeds if seed in outcomes]
    rows = [row for outcome in completed for row in outcome["metric_rows"]]
    write_csv(run_dir(config) / "metrics.csv", METRIC_COLUMNS, rows)

    final = {}
    if completed:
        names = sorted(set.intersection(*(set(o["final_metrics"]) for o in completed)))
        final = {name: aggregate([o["final_metrics"][name] for o in completed]) for name in names}

    summary = {
        "schema_version": SCHEMA_VERSION,
        "run_id": run_id(config),
        "name": config.name,
        "config_hash": config.config_hash(),
        "variant": config.variant.value,
        "env": config.env.name,
        "seeds": list(config.seeds),
        "training_steps": config.training_steps,
        "status": "partial" if failures else "complete",
        "failed_seeds": {str(seed): error for seed, error in failures.items()},
        "evaluations": [
            {"seed": o["seed"], "step": e["step"], "metrics": e["metrics"]}
            for o in completed for e in o["evaluations"]
        ],
        "final": final,
        "wall_time": sum(o["wall_time"] for o in completed),
    }
    write_summary(run_dir(config) / "summary.json", summary)
    return summary


def evaluate_checkpoint(config: RunConfig, checkpoint: Path, seed: Optional[int] = None) -> dict[str, float]:
    """
    Restore a checkpoint written by run_seed and re-run its last evaluation.

    The seed comes from the checkpoint metadata unless given explicitly.
    """
    metadata = load_checkpoint_metadata(checkpoint)
    if metadata.get("config_hash") != config.config_hash():
        raise ConfigurationError(
            f"Checkpoint was written for config {metadata.get('config_hash')}, got {config.config_hash()}"
        )
    seed = metadata["seed"] if seed is None else seed
    trainer = Trainer(config, seed)
    load_checkpoint(checkpoint, trainer.nets.checkpoint_blocks())
    return trainer.evaluate(int(metadata.get("evaluation_index", 0)))


def load_checkpoint_metadata(checkpoint: Path) -> dict:
    return read_manifest(Path(checkpoint))["metadata"]


# ── Comparison ──────────────────────────────────────────────────────────────

@dataclass
class RankedEntry:
    label: str
    mean: float
    stderr: float
    n: int

    @property
    def ci(self) -> tuple[float, float]:
        return self.mean - CONFIDENCE_Z * self.stderr, self.mean + CONFIDENCE_Z * self.stderr


@dataclass
class PairVerdict:
    better: str
    worse: str
    difference: float
    separated: bool  # |difference| > stderr_a + stderr_b
    tie: bool


@dataclass
class ComparisonReport:
    metric: str
    higher_is_better: bool
    entries: list[RankedEntry] = field(default_factory=list)
    pairs: list[PairVerdict] = field(default_factory=list)

    @property
    def ordering(self) -> list[str]:
        return [entry.label for entry in self.entries]

    @property
    def all_separated(self) -> bool:
        return all(pair.separated for pair in self.pairs)

    def entry(self, label: str) -> RankedEntry:
        for entry in self.entries:
            if entry.label == label:
                return entry
        raise ConfigurationError(f"No run labelled '{label}' in this comparison; have {self.ordering}")

    def verdict(self, first: str, second: str) -> PairVerdict:
        """Judge any two runs, adjacent in the ranking or not"""
        a, b = self.entry(first), self.entry(second)
        if self.ordering.index(second) < self.ordering.index(first):
            a, b = b, a
        return judge(a, b)

    def as_text(self) -> str:
        sign = ">" if self.higher_is_better else "<"
        lines = [f"Metric: {self.metric} (ranked {'descending' if self.higher_is_better else 'ascending'})"]
        for rank, entry in enumerate(self.entries, start=1):
            low, high = entry.ci
            lines.append(f"  {rank}. {entry.label}: {entry.mean:.4f} ± {entry.stderr:.4f} "
                         f"(95% CI [{low:.4f}, {high:.4f}], n={entry.n})")
        for pair in self.pairs:
            if pair.tie:
                verdict = "tie"
            else:
                verdict = "separated" if pair.separated else "not separated"
            lines.append(f"  {pair.better} {sign} {pair.worse}: Δ={pair.difference:.4f} [{verdict}]")
        return "\n".join(lines)


def judge(better: RankedEntry, worse: RankedEntry) -> PairVerdict:
    difference = abs(worse.mean - better.mean)
    return PairVerdict(
        better=better.label,
        worse=worse.label,
        difference=difference,
        separated=difference > better.stderr + worse.stderr,
        tie=difference == 0.0,
    )


def compare(summaries: Sequence[dict], metric: str, higher_is_better: bool = False) -> ComparisonReport:
    """
    Rank run summaries by the mean of a final metric and judge each adjacent
    pair: a tie when the means are equal, separated when the gap exceeds the
    sum of both standard errors. Other pairs go through
    ComparisonReport.verdict.
    """
    if len(summaries) < 2:
        raise ConfigurationError(f"compare needs at least two summaries, got {len(summaries)}")

    entries = []
    for summary in summaries:
        stats = summary.get("final", {}).get(metric)
        label = summary.get("name") or summary.get("run_id", "?")
        if stats is None:
            raise ConfigurationError(f"Summary '{label}' has no final metric '{metric}'")
        entries.append(RankedEntry(label, float(stats["mean"]), float(stats["stderr"]), int(stats["n"])))

    # stable: equal means keep input order
    entries.sort(key=lambda entry: -entry.mean if higher_is_better else entry.mean)
    report = ComparisonReport(metric=metric, higher_is_better=higher_is_better, entries=entries)
    report.pairs = [judge(a, b) for a, b in zip(entries[:-1], entries[1:])]
    return report
