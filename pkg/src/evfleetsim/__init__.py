"""Discrete-event simulator for electric ride-hailing fleets."""

from .config import ScenarioConfig, load_config, parse_config
from .errors import ConfigError, SchemaError, SimulationError
from .runner import RunManifest, run_scenario, simulate

__all__ = [
    "ConfigError",
    "RunManifest",
    "ScenarioConfig",
    "SchemaError",
    "SimulationError",
    "load_config",
    "parse_config",
    "run_scenario",
    "simulate",
]
__version__ = "0.1.0"
