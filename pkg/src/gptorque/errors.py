"""Exception types shared across the package.

Input validation failures raise plain ValueError (or ConfigError for config
files, so the CLI can map them to a dedicated exit code). NumericalError and
DivergenceError mark failures that occur after validation passed.
"""


class ConfigError(ValueError):
    """Configuration file is missing, malformed, or fails validation."""


class NumericalError(RuntimeError):
    """A linear-algebra step failed beyond repair (e.g. factorization).

    ``output_index`` identifies the offending output dimension when the
    failure happened inside a per-output computation, else None.
    """

    def __init__(self, message, output_index=None):
        super().__init__(message)
        self.output_index = output_index


class DivergenceError(RuntimeError):
    """Simulated state became non-finite. ``time`` is the failure time."""

    def __init__(self, message, time):
        super().__init__(message)
        self.time = time
