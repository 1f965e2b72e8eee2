"""Exception hierarchy shared by all modules.

The CLI maps these onto stable exit codes: ConfigError -> 2,
DataError -> 3, InfeasibleError -> 4.
"""


class PlannerError(Exception):
    """Base class for all package errors."""


class ConfigError(PlannerError):
    """Invalid configuration value or inconsistent parameter set."""


class DataError(PlannerError):
    """Malformed or out-of-contract input data."""


class InfeasibleError(PlannerError):
    """No feasible result exists for the given inputs (blocked, no guidance)."""
