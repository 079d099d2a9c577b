"""Exception types shared across the toolkit.

Everything raised on bad data derives from ArchVolError so the CLI can map
it to a single data-error exit code; usage errors stay with argparse.
"""


class ArchVolError(Exception):
    """Base class for all toolkit data errors."""


class DimensionError(ArchVolError):
    """Volume, grid, or lattice dimensions violate a precondition."""


class CurveError(ArchVolError):
    """Arch polyline is malformed (too few points, duplicates, crossings)."""


class RangeError(ArchVolError):
    """A scalar parameter lies outside its allowed interval."""


class FitRankError(ArchVolError):
    """Lattice fit normal equations are singular."""


class DivergenceError(ArchVolError):
    """Optimizer hit a non-finite objective; carries the last stable iterate."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class SchemaError(ArchVolError):
    """A structured text document is missing or mistypes a field."""


class VolumeFormatError(ArchVolError):
    """Raw volume file fails its header contract (length, dtype, NaN)."""


class PhantomSpecError(ArchVolError):
    """Phantom specification is unrealizable (e.g. overlapping teeth)."""
