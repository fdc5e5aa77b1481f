"""Panoramic annular imagery to 3-D semantic occupancy, in plain numpy.

The package is organised bottom-up:

- :mod:`panocc.camera` -- annular camera model, angle conventions, projection
- :mod:`panocc.unwrap` -- equirectangular remap tables and bilinear resampling
- :mod:`panocc.bigrid` -- Cartesian and polar voxel grids plus cross indexing
- :mod:`panocc.lifting` -- plane-to-volume feature lifting and scale fusion
- :mod:`panocc.amoe3d` -- polar injection, saliency gating, expert refinement
- :mod:`panocc.ssc` -- losses and scene-completion metrics
- :mod:`panocc.synth` -- deterministic synthetic scenes and renders
- :mod:`panocc.ptns` / :mod:`panocc.manifest` -- on-disk formats
- :mod:`panocc.cli` -- the ``panocc`` command
"""

from .bigrid import (
    CartesianGridSpec,
    CrossIndexTable,
    PolarGridSpec,
    build_cross_indices,
    cartesian_centroids,
    default_cartesian,
    default_polar_for,
    polar_centroids,
)
from .camera import (
    CameraModel,
    SphericalAngles,
    equi_to_angles,
    load_calibration,
    model_from_dict,
    model_to_dict,
    save_calibration,
    wrap_angle,
)
from .errors import (
    BadGridError,
    DegeneratePointError,
    DimMismatchError,
    EmptyValidRegionError,
    FormatError,
    GridMismatchError,
    IndexOutOfRangeError,
    LevelMismatchError,
    NoConvergenceError,
    NonInvertibleError,
    NoSupervisedVoxelsError,
    OutOfRangeError,
    PanoccError,
    ShapeMismatchError,
    UnknownPresetError,
)
from .lifting import (
    FeaturePlane,
    FeatureVolume,
    GdcHead,
    ScaleWeights,
    apply_gdc,
    fuse_scales,
    gdc_offset,
    lift_volume,
)
from .manifest import ClassEntry, FrameEntry, Manifest, load_manifest, save_manifest
from .ptns import read_ptns, write_ptns
from .ssc import (
    IGNORE,
    LogitVolume,
    LossBreakdown,
    LossConfig,
    OccupancyGrid,
    SscReport,
    argmax_labels,
    ce_loss,
    ce_weights_from_frequencies,
    fp_loss,
    scal_loss,
    softmax_probs,
    ssc_metrics,
    total_loss,
)
from .synth import SynthScene, make_fixture, render_equi, visible_surface
from .unwrap import ImagePlane, RemapTable, apply_remap, build_remap

__version__ = "0.1.0"

__all__ = [
    "BadGridError",
    "CameraModel",
    "CartesianGridSpec",
    "ClassEntry",
    "CrossIndexTable",
    "DegeneratePointError",
    "DimMismatchError",
    "EmptyValidRegionError",
    "FeaturePlane",
    "FeatureVolume",
    "FormatError",
    "FrameEntry",
    "GdcHead",
    "GridMismatchError",
    "IGNORE",
    "ImagePlane",
    "IndexOutOfRangeError",
    "LevelMismatchError",
    "LogitVolume",
    "LossBreakdown",
    "LossConfig",
    "Manifest",
    "NoConvergenceError",
    "NonInvertibleError",
    "NoSupervisedVoxelsError",
    "OccupancyGrid",
    "OutOfRangeError",
    "PanoccError",
    "PolarGridSpec",
    "RemapTable",
    "ScaleWeights",
    "ShapeMismatchError",
    "SphericalAngles",
    "SscReport",
    "SynthScene",
    "UnknownPresetError",
    "apply_gdc",
    "apply_remap",
    "argmax_labels",
    "build_cross_indices",
    "build_remap",
    "cartesian_centroids",
    "ce_loss",
    "ce_weights_from_frequencies",
    "default_cartesian",
    "default_polar_for",
    "equi_to_angles",
    "fp_loss",
    "fuse_scales",
    "gdc_offset",
    "lift_volume",
    "load_calibration",
    "load_manifest",
    "make_fixture",
    "model_from_dict",
    "model_to_dict",
    "polar_centroids",
    "read_ptns",
    "render_equi",
    "save_calibration",
    "save_manifest",
    "scal_loss",
    "softmax_probs",
    "ssc_metrics",
    "total_loss",
    "visible_surface",
    "wrap_angle",
    "write_ptns",
]
