"""Exception hierarchy.

The CLI maps these onto exit codes: ``ConfigError`` (and subclasses) -> 2,
``GuardRailError`` -> 3.
"""


class ErmTreeError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(ErmTreeError, ValueError):
    """Invalid input: bad parameters, malformed files, schema violations."""


class DataError(ConfigError):
    """A dataset or model violates its structural invariants."""


class DimensionError(DataError):
    pass


class LabelError(DataError):
    pass


class EmptyLeafError(DataError):
    pass


class InfeasibleSpecError(ConfigError):
    """Generator parameters cannot be realized (e.g. eta leaves [0, 1])."""


class GuardRailError(ErmTreeError):
    """An operation was asked to run outside its resource envelope."""
