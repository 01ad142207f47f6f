"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4.
"""


class EventMixerError(Exception):
    """Base class for all package errors."""


class ConfigError(EventMixerError):
    """Invalid configuration: bad flag values, inconsistent model specs."""


class DataError(EventMixerError):
    """Invalid input data: malformed events, bad labels, out-of-range indices."""


class ShapeError(ConfigError):
    """Array dimensions do not chain; a configuration/wiring mistake."""


class NumericError(EventMixerError):
    """NaN/Inf detected where finite values are required."""
