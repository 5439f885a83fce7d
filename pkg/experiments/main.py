"""
Experiment CLI

Verbs:
    train <config>                    train every seed, write metrics, summaries, checkpoints
    evaluate <checkpoint> <config>    restore a checkpoint and re-run its evaluation
    compare <summary...> --metric M   rank run summaries by a final metric
    gradcheck                         finite-difference gradient suite
    oracle                            brute-force equivalence suite

Usage:
    python -m experiments.main train configs/syncgrid_full.json --seed 3 --steps 5000
    python -m experiments.main compare results/*/summary.json --metric avg_queue_len

Exit codes: 0 success, 1 failed suite or partial run, 2 invalid config or arguments.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

# Allow running as: python experiments/main.py (no package install needed)
sys.path.insert(0, str(Path(__file__).parent.parent))

import config
from errors import ConfigurationError
from experiments.results import read_summary
from experiments.runner import compare, evaluate_checkpoint, run
from experiments.suites import SuiteResult, run_gradcheck_suite, run_oracle_suite
from models import load_run_config

logger = logging.getLogger("experiments")


def _load_config(args: argparse.Namespace):
    """Config file + CLI overrides; DCCP_MARL_OUTPUT_DIR applies when the file names no output_dir"""
    run_config = load_run_config(args.config)
    out = args.out
    if out is None and "output_dir" not in run_config.model_fields_set:
        out = config.OUTPUT_DIR
    return run_config.with_overrides(seed=args.seed, steps=args.steps, out=out)


def _report_suite(name: str, results: list[SuiteResult]) -> int:
    failed = [result for result in results if not result.passed]
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        print(f"[{status}] {result.name}: {result.detail} ({result.seconds:.2f}s)")
    print(f"{name}: {len(results) - len(failed)}/{len(results)} passed")
    return 1 if failed else 0


def cmd_train(args: argparse.Namespace) -> int:
    run_config = _load_config(args)
    summary = run(run_config, workers=args.workers)
    for metric, stats in summary["final"].items():
        print(f"{metric}: {stats['mean']:.4f} ± {stats['stderr']:.4f} (n={stats['n']})")
    if summary["status"] != "complete":
        print(f"Run incomplete; failed seeds: {', '.join(summary['failed_seeds'])}", file=sys.stderr)
        return 1
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    run_config = load_run_config(args.config)
    if args.out is not None:
        run_config = run_config.with_overrides(out=args.out)
    metrics = evaluate_checkpoint(run_config, Path(args.checkpoint), seed=args.seed)
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    summaries = [read_summary(path) for path in args.summaries]
    report = compare(summaries, args.metric, higher_is_better=args.descending)
    print(report.as_text())
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    return _report_suite("gradcheck", run_gradcheck_suite(seed=args.seed or 0))


def cmd_oracle(args: argparse.Namespace) -> int:
    return _report_suite("oracle", run_oracle_suite(seed=args.seed or 0))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Multi-agent deep Q-learning with depthwise-convolution communication",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--log-level", default=config.LOG_LEVEL, help="Root logger level (default: %(default)s)")
    verbs = parser.add_subparsers(dest="verb", required=True)

    train = verbs.add_parser("train", help="Train and evaluate every seed of a run config")
    train.add_argument("config", help="Path to a JSON run config")
    train.add_argument("--seed", type=int, help="Run only this seed")
    train.add_argument("--steps", type=int, help="Override training_steps")
    train.add_argument("--out", help="Override output_dir")
    train.add_argument("--workers", type=int, default=config.WORKERS, help="Seeds run in parallel (default: %(default)s)")
    train.set_defaults(handler=cmd_train)

    evaluate = verbs.add_parser("evaluate", help="Evaluate a saved checkpoint")
    evaluate.add_argument("checkpoint", help="Checkpoint directory written by train")
    evaluate.add_argument("config", help="Run config the checkpoint was trained with")
    evaluate.add_argument("--seed", type=int, help="Override the seed stored in the checkpoint")
    evaluate.add_argument("--out", help="Override output_dir")
    evaluate.set_defaults(handler=cmd_evaluate)

    comparison = verbs.add_parser("compare", help="Rank run summaries by a final metric")
    comparison.add_argument("summaries", nargs="+", help="Run-level summary.json files")
    comparison.add_argument("--metric", required=True, help="Final metric name, e.g. avg_queue_len")
    comparison.add_argument("--descending", action="store_true", help="Higher is better (rewards)")
    comparison.set_defaults(handler=cmd_compare)

    for name, handler, text in (
        ("gradcheck", cmd_gradcheck, "Finite-difference gradient suite"),
        ("oracle", cmd_oracle, "Brute-force equivalence suite"),
    ):
        suite = verbs.add_parser(name, help=text)
        suite.add_argument("--seed", type=int, help="Fixture seed (default 0)")
        suite.set_defaults(handler=handler)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format=config.LOG_FORMAT,
        datefmt=config.LOG_DATEFMT,
    )
    logger.info(f"Running {args.verb} command")
    try:
        return args.handler(args)
    except ValidationError as e:
        print(f"Invalid run config:\n{e}", file=sys.stderr)
        return 2
    except (ConfigurationError, FileNotFoundError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
