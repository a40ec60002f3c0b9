"""MirrorNet: a hierarchical VAE for semi-supervised 2D human pose estimation."""

from .config import ConfigError, CurriculumConfig, DataConfig, RunConfig, load_config
from .networks import MirrorNet, NetConfig

__all__ = ["ConfigError", "CurriculumConfig", "DataConfig", "MirrorNet", "NetConfig", "RunConfig", "load_config"]
__version__ = "0.1.0"
