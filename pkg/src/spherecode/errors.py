"""Exception types shared across the package.

The command-line driver maps these onto process exit codes: configuration
problems exit with 2, numeric failures during iteration exit with 3.
"""


class ConfigError(Exception):
    """Invalid or inconsistent run configuration (bad key, bad value, bad file)."""


class NumericAbort(RuntimeError):
    """A numeric routine produced NaN/inf and cannot continue.

    The message carries enough context (routine, iteration, offending
    quantity) to reproduce the failure.
    """
