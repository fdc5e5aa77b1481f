"""Exception types shared across the package.

Every error raised by library code derives from :class:`PanoccError`, so
callers (including the CLI) can distinguish computation failures from
ordinary I/O or usage problems with a single ``except`` clause.
"""


class PanoccError(Exception):
    """Base class for all errors raised by this package."""


class NonInvertibleError(PanoccError):
    """Camera calibration cannot be inverted (singular affine or
    non-monotone radial polynomial on the configured angular range)."""


class OutOfRangeError(PanoccError):
    """An angle, radius, or pixel coordinate lies outside its domain."""


class NoConvergenceError(PanoccError):
    """Iterative inversion failed to reach tolerance within the step cap."""


class DegeneratePointError(PanoccError):
    """A 3-D point too close to the camera center to project."""


class DimMismatchError(PanoccError):
    """Array dimensions disagree with the table/model they are used with."""


class BadGridError(PanoccError):
    """A grid specification is malformed (non-positive counts or edges,
    inverted radial range)."""


class LevelMismatchError(PanoccError):
    """A cross-grid index table was built for different grid levels than
    the volumes it is applied to."""


class IndexOutOfRangeError(PanoccError):
    """A stored index refers outside its target grid."""


class ShapeMismatchError(PanoccError):
    """Tensor operands disagree in shape or channel count."""


class GridMismatchError(PanoccError):
    """Volumes that must share a grid do not."""


class EmptyValidRegionError(PanoccError):
    """An operation that pools over valid pixels/voxels found none."""


class NoSupervisedVoxelsError(PanoccError):
    """A loss was asked to average over zero supervised voxels."""


class UnknownPresetError(PanoccError):
    """Requested synthetic-scene preset does not exist."""


class FormatError(PanoccError):
    """A file does not conform to the expected on-disk format."""
