"""Exception hierarchy shared across the toolkit.

The CLI maps these onto distinct exit codes (config=2, data=3, runtime=4).
"""


class ChanboostError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ChanboostError):
    """Invalid or inconsistent run configuration."""


class DataError(ChanboostError):
    """Malformed manifest, annotation, or input file."""


class TrainError(ChanboostError):
    """Training collapsed or cannot proceed (e.g. chance-level weak learner)."""
