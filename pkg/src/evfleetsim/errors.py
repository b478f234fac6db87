class ConfigError(ValueError):
    """Invalid scenario configuration or argument."""


class SchemaError(ConfigError):
    """Input data is missing a required column."""


class SimulationError(RuntimeError):
    """Internal-consistency failure; the run cannot continue."""
