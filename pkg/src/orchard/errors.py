"""Exception hierarchy. The CLI maps these to exit codes."""


class OrchardError(Exception):
    """Base class for all orchard failures."""


class ShapeError(OrchardError):
    """Tensor shapes are inconsistent; message names the offending dimension."""


class ConfigError(OrchardError):
    """Invalid configuration (CLI exit code 2)."""


class DataError(OrchardError):
    """Dataset problem: missing/undecodable files, bad splits (exit code 3)."""


class TrainingError(OrchardError):
    """Training diverged or optimizer state went non-finite (exit code 4)."""
