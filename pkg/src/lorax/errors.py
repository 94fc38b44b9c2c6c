"""Exception types and the process exit codes the CLI maps them to."""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


class LoraxError(Exception):
    """Base class for all toolkit errors."""

    exit_code = EXIT_RUNTIME


class ConfigurationError(LoraxError):
    """Invalid configuration value or combination of values."""

    exit_code = EXIT_CONFIG


class InputError(LoraxError):
    """Runtime input (shapes, dtypes, site ids) does not match the model."""

    exit_code = EXIT_DATA


class DataError(LoraxError):
    """Dataset content violates a contract (labels, files, budgets)."""

    exit_code = EXIT_DATA


class StateError(LoraxError):
    """Operation called in a lifecycle state that forbids it."""

    exit_code = EXIT_RUNTIME


class ManifestError(DataError):
    """Manifest file failed to parse or validate."""


class UndefinedMetricError(LoraxError):
    """Requested metric is undefined for the given matrix shape."""
