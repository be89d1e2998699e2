"""Exception types raised across the package.

Everything derives from ValueError so callers written against plain
ValueError checks keep working.
"""


class DaflowError(ValueError):
    """Base class for all project errors."""


class ShapeError(DaflowError):
    """Tensor dimensions do not line up."""


class ConfigError(DaflowError):
    """Invalid configuration value, unknown key or incompatible dims."""


class ContractError(DaflowError):
    """An operation was called outside its pre-conditions."""


class NumericalError(DaflowError):
    """An operation produced NaN or Inf."""


class DataError(DaflowError):
    """Dataset content is missing or unusable."""


class FormatError(DaflowError):
    """A file does not follow the expected on-disk format."""
