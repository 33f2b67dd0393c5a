"""Exception types shared across the simulator."""


class ConfigurationError(ValueError):
    """A configuration value or combination of values is invalid."""


class TraceFormatError(ValueError):
    """A trace file is malformed or violates trace invariants."""


class SimulationError(RuntimeError):
    """Internal state-machine misuse (double admit, unknown agent, ...)."""
