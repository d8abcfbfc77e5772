"""Exception hierarchy for the toolchain.

Every error carries the process exit code the CLI maps it to:

* 2 -- configuration, schema, or API-contract problems (the caller gave us
  something malformed: bad shapes, unknown formats, invalid config values)
* 3 -- data problems (well-formed inputs whose content is unusable:
  corrupted bundles, degenerate geometry)
* 4 -- numerical failures (non-finite values where finite ones are required)
"""

from __future__ import annotations


class ToolchainError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(ToolchainError):
    """Invalid configuration value or inconsistent run setup."""

    exit_code = 2


class SchemaError(ConfigError):
    """A document or bundle does not match its declared structure."""


class ContractError(ConfigError):
    """An API was called outside its contract (e.g. non-scalar loss)."""


class DimensionError(ConfigError):
    """Tensor shapes or dtypes are incompatible for the requested op."""


class CapacityError(ConfigError):
    """A composed sequence exceeds the encoder's maximum length."""


class IncompleteTableError(ConfigError):
    """A token table is missing a block for a declared category."""


class DataError(ToolchainError):
    """Well-formed input whose content cannot be used."""

    exit_code = 3


class CorruptBundleError(DataError):
    """A bundle failed its integrity checks (truncated or bad CRC)."""


class DegenerateInputError(DataError):
    """Geometry collapsed: zero vector, coinciding means, no direction."""


class UndefinedDivergenceError(DataError):
    """Empirical mass fell on a zero-probability target bin."""


class NumericalError(ToolchainError):
    """A computation produced non-finite values."""

    exit_code = 4
