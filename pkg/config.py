"""
Process-level defaults

Values come from the environment (or a local .env file).
Run-specific settings live in the JSON run config, see models.py.
"""

import os

from dotenv import load_dotenv

load_dotenv()

# Root directory for run outputs (metrics CSV, summaries, checkpoints)
OUTPUT_DIR: str = os.environ.get("DCCP_MARL_OUTPUT_DIR", "results")

# Root logger level used by the CLI
LOG_LEVEL: str = os.environ.get("DCCP_MARL_LOG_LEVEL", "INFO")

# Worker processes used to run seeds in parallel (1 = sequential)
WORKERS: int = int(os.environ.get("DCCP_MARL_WORKERS", "1"))

# Set to 1 to enable the long-running acceptance tests
RUN_SLOW_TESTS: bool = os.environ.get("DCCP_MARL_RUN_SLOW", "0") == "1"

LOG_FORMAT = '[%(asctime)s] [%(name)s] %(levelname)s - %(message)s'
LOG_DATEFMT = '%Y-%m-%d %H:%M:%S'

# ── Numerical verification thresholds ───────────────────────────────────────
GRADCHECK_STEP: float = 1e-5
GRADCHECK_TOLERANCE: float = 1e-4
ORACLE_TOLERANCE: float = 1e-12
