"""Exception types.

Two branches matter for exit-code mapping in the CLI: DataError (bad or
inconsistent inputs, exit 3) and NumericalError (degenerate geometry or
failed numerics, exit 4).
"""


class UmbracastError(Exception):
    """Base class for all errors raised by this package."""


class DataError(UmbracastError):
    """Invalid, inconsistent, or missing input data."""


class NumericalError(UmbracastError):
    """Degenerate geometry or a numerically ill-posed operation."""


class DimensionMismatchError(DataError):
    """Rasters that must share dimensions do not."""


class EmptyMaskError(DataError):
    """A mask required to be nonempty has no set pixels."""


class EmptyRegionError(DataError):
    """A metric region contains no evaluable pixels."""


class InsufficientSupportError(DataError):
    """Too few candidate points to fit a model robustly."""


class ManifestError(DataError):
    """A scene manifest entry is malformed or references missing files."""


class PointMapFormatError(DataError):
    """A point-map file has a bad magic tag, header, or truncated payload."""


class CorruptPointMapError(DataError):
    """A point-map file contains non-finite or non-positive-depth valid pixels."""


class DegenerateElevationError(NumericalError):
    """Elevation at +/-90 degrees: azimuth is undefined there."""


class SingularFitError(NumericalError):
    """Least-squares fit has a rank-deficient design matrix."""


class BehindCameraError(NumericalError):
    """Attempted to project a point with non-positive depth."""


class GrazingLightError(NumericalError):
    """Light direction is parallel to the receiver plane; no stable cast."""
