"""Exception types shared across the toolkit.

The CLI maps these onto distinct exit codes, so raising the right type
matters: bad user-supplied configuration is not the same failure mode as a
malformed data file or a stage blowing up mid-computation.
"""


class RsfcError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(RsfcError):
    """Invalid configuration: unknown keys, out-of-range parameters, missing paths."""


class DataError(RsfcError):
    """Malformed or inconsistent input data (files that parse but violate the format contract)."""


class StageError(RsfcError):
    """A pipeline stage failed while computing."""
