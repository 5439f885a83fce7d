"""Native cooperative grid environments"""

from envs.base import MultiAgentEnv, StepResult
from envs.sync_grid import SyncGrid
from envs.traffic import TrafficGridLite
from models import EnvConfig, SyncGridConfig, TrafficConfig


def make_env(config: EnvConfig) -> MultiAgentEnv:
    """Instantiate the environment described by an env config"""
    if isinstance(config, SyncGridConfig):
        return SyncGrid(config)
    if isinstance(config, TrafficConfig):
        return TrafficGridLite(config)
    raise TypeError(f"Unknown environment config {type(config).__name__}")


__all__ = ["MultiAgentEnv", "StepResult", "SyncGrid", "TrafficGridLite", "make_env"]
