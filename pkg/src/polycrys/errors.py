"""Exception hierarchy shared by all polycrys modules.

The CLI maps these onto exit codes: ConfigError -> 2, FormatError and
DataError -> 3, DivergenceError -> 4.
"""


class PolycrysError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PolycrysError):
    """Invalid parameters, infeasible settings, bad configuration files."""


class FormatError(PolycrysError):
    """Malformed or truncated on-disk data (volumes, checkpoints, manifests)."""


class DataError(PolycrysError):
    """Inputs that are structurally valid but unusable (empty sets, shape
    mismatches, missing files)."""


class DivergenceError(PolycrysError):
    """Training produced a non-finite loss."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
