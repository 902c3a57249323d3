"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration and usage
problems exit 1, data problems exit 2, numeric failures exit 3.
"""


class PedcastError(Exception):
    """Base class for all package errors."""


class ConfigError(PedcastError):
    """Invalid configuration value (bad sigma, unknown dataset name, ...)."""


class DimensionError(PedcastError):
    """Operands with incompatible shapes; the message names both shapes."""


class UnitsError(PedcastError):
    """World and normalized coordinates were mixed."""


class DomainError(PedcastError):
    """Input outside an operation's mathematical domain (e.g. log of <= 0)."""


class DataError(PedcastError):
    """Base class for problems with input data files or derived datasets."""


class ParseError(DataError):
    """Malformed annotation file; carries the file and line number."""


class StrideError(DataError):
    """Frame ids do not advance with a uniform stride."""


class NormalizationError(DataError):
    """Scene bounding box is degenerate (zero extent in both axes)."""


class ContractError(DataError):
    """A pipeline precondition was violated (empty pool, no targets, ...)."""


class NumericError(PedcastError):
    """Non-finite value encountered during computation; carries diagnostics."""
