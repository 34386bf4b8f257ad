"""Graph-aided DDPG resource allocation for dynamic terahertz UAV mesh networks."""

from glove.config import ScenarioConfig, load_config

__all__ = ["ScenarioConfig", "load_config"]
__version__ = "0.1.0"
