"""Sharded BFT ordering: routers, batchers, consenters and assemblers."""
from .config import Config, ConfigError, primary_party, quorum_size

__all__ = ["Config", "ConfigError", "primary_party", "quorum_size"]
__version__ = "0.1.0"
