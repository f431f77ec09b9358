"""
Exception hierarchy for nuquant.
Each error class carries the process exit code the CLI reports for it.
"""


class NuquantError(Exception):
    """Base class for all nuquant errors."""

    exit_code = 1


class ConfigError(NuquantError):
    """Invalid configuration or command-line usage."""

    exit_code = 1


class DataError(NuquantError):
    """Input data that cannot be read or does not match its contract."""

    exit_code = 2


class BadMagicError(DataError):
    """File does not start with the NUQ1 magic bytes."""


class VersionMismatchError(DataError):
    """File format version is not supported."""


class TruncatedPayloadError(DataError):
    """File ends before the payload declared by its header."""


class IdCountMismatchError(DataError):
    """Companion id file does not list exactly one id per row."""


class DimensionMismatchError(DataError):
    """Vector or matrix dimension does not match the model or codebook."""


class MissingSideInfoError(DataError):
    """Inverse transform called without the side information of the forward pass."""


class DomainError(NuquantError, ValueError):
    """Argument lies outside the domain of a function."""

    exit_code = 2


class NumericalError(NuquantError):
    """Training produced a non-finite loss or parameter."""

    exit_code = 3
