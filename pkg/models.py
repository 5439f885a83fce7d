"""
Run Configuration Models
Schema Version: v1

Canonical configuration schema shared across:
- Environments (SyncGrid, TrafficGridLite)
- Network construction and the trainer
- Experiment runner and CLI
"""

import hashlib
import json
from enum import Enum
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


SCHEMA_VERSION = "v1"

Side = Literal["N", "E", "S", "W"]


class AgentVariant(str, Enum):
    """Value-network variants used in the ablation protocol"""
    FULL = "full"            # SE + ME + DQN
    DCCP_ONLY = "dccp_only"  # SE + DQN, no enhanced mean-field branch
    IQL = "iql"              # DQN on own observation only
    MFQ = "mfq"              # DQN on own observation + mean previous neighbor action


class OptimizerKind(str, Enum):
    """Update rule used by nn.core.optimizer_step"""
    ADAM = "adam"
    SGD = "sgd"


class HyperParams(BaseModel):
    """Exploration, optimization and replay hyperparameters"""
    epsilon_start: float = Field(1.0, ge=0.0, le=1.0, description="Initial exploration ratio")
    epsilon_end: float = Field(0.05, ge=0.0, le=1.0, description="Final exploration ratio")
    epsilon_decay_fraction: float = Field(
        0.2, gt=0.0, le=1.0, description="Fraction of training steps over which epsilon decays linearly"
    )
    learning_rate: float = Field(1e-3, ge=0.0, description="Learning rate alpha")
    gamma: float = Field(0.99, ge=0.0, lt=1.0, description="Discount factor")
    lambda_prn: float = Field(1.0, ge=0.0, description="PRN loss coefficient lambda_1")
    lambda_opn: float = Field(1.0, ge=0.0, description="OPN loss coefficient lambda_2")
    target_period: int = Field(200, ge=1, description="Target sync period eta (environment steps)")
    batch_size: int = Field(32, ge=1, description="Joint timesteps per minibatch")
    buffer_capacity: int = Field(5000, ge=1, description="Replay capacity in joint timesteps")
    train_every: int = Field(1, ge=1, description="Environment steps between gradient steps")
    optimizer: OptimizerKind = OptimizerKind.ADAM
    adam_beta1: float = Field(0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)

    @model_validator(mode="after")
    def check_ranges(self):
        if self.epsilon_end > self.epsilon_start:
            raise ValueError("epsilon_end must not exceed epsilon_start")
        if self.batch_size > self.buffer_capacity:
            raise ValueError("batch_size cannot exceed buffer_capacity")
        return self


class NetworkSizes(BaseModel):
    """Layer widths and DCCP geometry"""
    encoder_hidden: list[int] = Field(default_factory=lambda: [32], description="PRN/OPN encoder hidden widths")
    dqn_hidden: list[int] = Field(default_factory=lambda: [64, 64], description="DQN head hidden widths")
    dccp_kernels: int = Field(4, ge=1, description="Kernels per channel K")
    dccp_kernel_size: int = Field(3, ge=1, description="Kernel side n (odd)")

    @field_validator("dccp_kernel_size")
    @classmethod
    def validate_odd(cls, v):
        if v % 2 == 0:
            raise ValueError("dccp_kernel_size must be odd")
        return v

    @field_validator("encoder_hidden", "dqn_hidden")
    @classmethod
    def validate_widths(cls, v):
        if any(width < 1 for width in v):
            raise ValueError("layer widths must be positive")
        return v


class SyncGridConfig(BaseModel):
    """Parity task where each agent must output the XOR of its patch's hidden bits"""
    name: Literal["sync_grid"] = "sync_grid"
    grid_height: int = Field(3, ge=1, le=32)
    grid_width: int = Field(3, ge=1, le=32)
    horizon: int = Field(8, ge=1)
    neighborhood: int = Field(3, ge=1, description="Side of the square patch defining neighbors (odd)")

    @field_validator("neighborhood")
    @classmethod
    def validate_odd(cls, v):
        if v % 2 == 0:
            raise ValueError("neighborhood must be odd")
        return v


class OdPair(BaseModel):
    """Origin-destination pair between two boundary intersections"""
    origin: tuple[int, int]
    entry: Side = Field(..., description="Side of the origin intersection vehicles enter from")
    destination: tuple[int, int]
    exit: Side = Field(..., description="Side of the destination intersection vehicles leave through")


class FlowSpec(BaseModel):
    """Time-varying vehicle flow with a triangular peak"""
    name: str = Field(..., min_length=1, max_length=32)
    od_pairs: list[OdPair] = Field(..., min_length=1)
    peak_rate: float = Field(..., ge=0.0, description="Vehicles per step (whole flow) at the peak")
    peak_step: int = Field(..., ge=0)
    ramp_steps: int = Field(..., ge=1, description="Steps from zero to peak (and peak back to zero)")
    base_rate: float = Field(0.0, ge=0.0, description="Rate added at every step")


class TrafficConfig(BaseModel):
    """Store-and-forward queueing model of a signalized grid"""
    name: Literal["traffic_grid_lite"] = "traffic_grid_lite"
    grid_height: int = Field(3, ge=1, le=16)
    grid_width: int = Field(3, ge=1, le=16)
    horizon: int = Field(144, ge=1)
    saturation: int = Field(2, ge=1, description="Vehicles released per served lane per step")
    delay_weight: float = Field(0.2, ge=0.0, description="Weight w of head-of-queue delay in the reward")
    neighborhood: int = Field(3, ge=1)
    flows: list[FlowSpec] = Field(default_factory=list)

    @field_validator("neighborhood")
    @classmethod
    def validate_odd(cls, v):
        if v % 2 == 0:
            raise ValueError("neighborhood must be odd")
        return v

    @model_validator(mode="after")
    def fill_and_check_flows(self):
        if not self.flows:
            self.flows = default_flows(self.grid_height, self.grid_width, self.horizon)
        for flow in self.flows:
            for pair in flow.od_pairs:
                _check_boundary(pair.origin, pair.entry, self.grid_height, self.grid_width, "entry")
                _check_boundary(pair.destination, pair.exit, self.grid_height, self.grid_width, "exit")
        return self


def _check_boundary(cell: tuple[int, int], side: str, height: int, width: int, what: str) -> None:
    row, col = cell
    if not (0 <= row < height and 0 <= col < width):
        raise ValueError(f"{what} cell {cell} lies outside the {height}x{width} grid")
    on_edge = {
        "N": row == 0,
        "S": row == height - 1,
        "W": col == 0,
        "E": col == width - 1,
    }[side]
    if not on_edge:
        raise ValueError(f"{what} side {side} of cell {cell} is not on the grid boundary")


def default_flows(height: int, width: int, horizon: int) -> list[FlowSpec]:
    """
    Two peak-hour commuter flows.

    "main" crosses the E-W streets (corner to corner and straight across),
    "side" crosses the N-S avenues; both carry pairs in each direction.
    The side flow peaks later than the main flow.
    """
    last_row, last_col = height - 1, width - 1
    mid_row = height // 2

    main_pairs = [
        OdPair(origin=(0, 0), entry="W", destination=(last_row, last_col), exit="E"),
        OdPair(origin=(mid_row, 0), entry="W", destination=(mid_row, last_col), exit="E"),
        OdPair(origin=(last_row, 0), entry="W", destination=(0, last_col), exit="E"),
        OdPair(origin=(last_row, last_col), entry="E", destination=(0, 0), exit="W"),
        OdPair(origin=(mid_row, last_col), entry="E", destination=(mid_row, 0), exit="W"),
        OdPair(origin=(0, last_col), entry="E", destination=(last_row, 0), exit="W"),
    ]
    side_pairs = []
    for col in range(width):
        side_pairs.append(OdPair(origin=(0, col), entry="N", destination=(last_row, last_col - col), exit="S"))
        side_pairs.append(OdPair(origin=(last_row, col), entry="S", destination=(0, last_col - col), exit="N"))

    ramp = max(1, horizon // 4)
    return [
        FlowSpec(name="main", od_pairs=main_pairs, peak_rate=1.5,
                 peak_step=max(ramp, int(horizon * 0.3)), ramp_steps=ramp),
        FlowSpec(name="side", od_pairs=side_pairs, peak_rate=1.0,
                 peak_step=max(ramp, int(horizon * 0.5)), ramp_steps=ramp),
    ]


EnvConfig = Union[SyncGridConfig, TrafficConfig]


class RunConfig(BaseModel):
    """
    Complete description of one experiment.

    Every output artifact records `config_hash()`; the output directory is
    excluded from the hash so relocating results keeps their identity.
    """
    schema_version: str = SCHEMA_VERSION
    name: str = Field(..., min_length=1, max_length=64, pattern=r"^[A-Za-z0-9_.-]+$")
    env: EnvConfig = Field(..., discriminator="name")
    variant: AgentVariant = AgentVariant.FULL
    hyper: HyperParams = Field(default_factory=HyperParams)
    network: NetworkSizes = Field(default_factory=NetworkSizes)
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    training_steps: int = Field(0, ge=0)
    eval_every: int = Field(2000, ge=1, description="Training steps between evaluations")
    eval_episodes: int = Field(10, ge=1)
    dump_trajectory: bool = Field(False, description="Write the last evaluation episode as trajectory CSV")
    output_dir: str = "results"

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "name": "syncgrid-full",
                "env": {"name": "sync_grid", "grid_height": 3, "grid_width": 3, "horizon": 8},
                "variant": "full",
                "hyper": {"learning_rate": 0.001, "gamma": 0.9, "target_period": 200},
                "seeds": [1, 2, 3, 4, 5],
                "training_steps": 30000,
                "eval_every": 2000,
                "eval_episodes": 10,
            }
        }
    )

    @field_validator("seeds")
    @classmethod
    def validate_seeds(cls, v):
        if len(set(v)) != len(v):
            raise ValueError("seeds must be unique")
        if any(seed < 0 for seed in v):
            raise ValueError("seeds must be non-negative")
        return v

    @model_validator(mode="after")
    def check_patch_geometry(self):
        # Neighbor sets and the DCCP receptive field are the same patch
        if self.env.neighborhood != self.network.dccp_kernel_size:
            raise ValueError(
                f"env.neighborhood ({self.env.neighborhood}) must equal "
                f"network.dccp_kernel_size ({self.network.dccp_kernel_size})"
            )
        return self

    def config_hash(self) -> str:
        """First 12 hex digits of SHA-256 over the canonical JSON (output_dir excluded)"""
        payload = self.model_dump(mode="json", exclude={"output_dir"})
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]

    def with_overrides(
        self,
        seed: Optional[int] = None,
        steps: Optional[int] = None,
        out: Optional[str] = None,
    ) -> "RunConfig":
        """Apply CLI overrides, returning a re-validated copy"""
        data = self.model_dump(mode="json")
        if seed is not None:
            data["seeds"] = [seed]
        if steps is not None:
            data["training_steps"] = steps
        if out is not None:
            data["output_dir"] = out
        return RunConfig.model_validate(data)


def load_run_config(path) -> RunConfig:
    """Read and validate a JSON run config"""
    with open(path, "r", encoding="utf-8") as f:
        return RunConfig.model_validate_json(f.read())
