"""Lifting 2-D feature planes into voxel volumes by projective sampling.

Every voxel centroid is projected into a feature plane (equirectangular or
raw annular view), optionally shifted by a learned global pixel offset, and
bilinearly sampled.  Multi-scale volumes produced this way are fused with
per-voxel convex weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bigrid import CartesianGridSpec, PolarGridSpec, cartesian_centroids, polar_centroids
from .camera import CameraModel
from .errors import (
    DimMismatchError,
    EmptyValidRegionError,
    GridMismatchError,
    ShapeMismatchError,
)

__all__ = [
    "FeaturePlane",
    "FeatureVolume",
    "GdcHead",
    "ScaleWeights",
    "gdc_offset",
    "apply_gdc",
    "lift_volume",
    "fuse_scales",
]

_SCALES = (1, 4, 8, 16)


@dataclass
class FeaturePlane:
    """A ``(H, W, C)`` feature map at pyramid scale ``scale`` in one of the
    two camera views (``"equi"`` or ``"raw"``)."""

    data: np.ndarray
    scale: int = 1
    view: str = "equi"
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise DimMismatchError(f"plane must be (H, W, C), got {self.data.shape}")
        if self.scale not in _SCALES:
            raise DimMismatchError(f"scale must be one of {_SCALES}, got {self.scale}")
        if self.view not in ("equi", "raw"):
            raise DimMismatchError(f"view must be 'equi' or 'raw', got {self.view!r}")
        if self.valid is not None:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.data.shape[:2]:
                raise DimMismatchError(
                    f"validity mask {self.valid.shape} does not match plane "
                    f"{self.data.shape[:2]}"
                )

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]


@dataclass
class FeatureVolume:
    """Per-voxel feature rows ``(N, C)`` over a grid spec, with a validity
    mask; invalid rows always hold zeros (enforced at construction)."""

    grid: CartesianGridSpec | PolarGridSpec
    data: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(-1)
        n = self.grid.voxel_count
        if self.data.ndim != 2 or self.data.shape[0] != n:
            raise DimMismatchError(
                f"volume data {self.data.shape} does not cover {n} voxels"
            )
        if self.valid.shape[0] != n:
            raise DimMismatchError(
                f"validity mask length {self.valid.shape[0]} != voxel count {n}"
            )
        if not np.all(self.valid):
            self.data = self.data.copy()
            self.data[~self.valid] = 0.0

    @property
    def channels(self):
        return self.data.shape[1]

    def as_grid(self) -> np.ndarray:
        """View the rows as a dense grid.

        Cartesian grids come back as ``(nz, ny, nx, C)``, polar grids as
        ``(nz, nphi, nr, C)`` — the inverse of the flat ordering.
        """
        g = self.grid
        if isinstance(g, CartesianGridSpec):
            return self.data.reshape(g.nz, g.ny, g.nx, self.channels)
        return self.data.reshape(g.nz, g.nphi, g.nr, self.channels)

    def valid_as_grid(self) -> np.ndarray:
        g = self.grid
        if isinstance(g, CartesianGridSpec):
            return self.valid.reshape(g.nz, g.ny, g.nx)
        return self.valid.reshape(g.nz, g.nphi, g.nr)


@dataclass
class GdcHead:
    """Global offset head: mean-pooled plane features times ``weights`` plus
    ``bias`` gives a single ``(du, dv)`` pixel shift for the whole plane."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 2 or self.weights.shape[1] != 2 or self.bias.shape != (2,):
            raise ShapeMismatchError(
                f"head needs weights (C, 2) and bias (2,), got "
                f"{self.weights.shape} and {self.bias.shape}"
            )

    @classmethod
    def zeros(cls, channels: int) -> "GdcHead":
        """Freshly initialized head: all-zero weights and bias, so the
        offset is exactly (0, 0) and lifting is unchanged."""
        return cls(weights=np.zeros((channels, 2)), bias=np.zeros(2))


@dataclass
class ScaleWeights:
    """Per-voxel fusion logits ``(N, S)`` over S scales."""

    logits: np.ndarray

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 2:
            raise ShapeMismatchError(f"logits must be (N, S), got {self.logits.shape}")

    @classmethod
    def uniform(cls, n_voxels: int, n_scales: int) -> "ScaleWeights":
        return cls(logits=np.zeros((n_voxels, n_scales)))


def gdc_offset(plane: FeaturePlane, head: GdcHead) -> np.ndarray:
    """Offset ``(du, dv)`` predicted from the plane's valid-pixel mean.

    Raises :class:`EmptyValidRegionError` when the plane has no valid pixels
    to pool over.
    """
    if head.weights.shape[0] != plane.channels:
        raise ShapeMismatchError(
            f"head expects {head.weights.shape[0]} channels, plane has {plane.channels}"
        )
    if plane.valid is None:
        pooled = plane.data.reshape(-1, plane.channels)
    else:
        if not np.any(plane.valid):
            raise EmptyValidRegionError("no valid pixels to pool for the offset head")
        pooled = plane.data[plane.valid]
    gap = pooled.mean(axis=0)
    return gap @ head.weights + head.bias


def apply_gdc(coords: np.ndarray, delta) -> np.ndarray:
    """Shift ``(N, 2)`` pixel coordinates by a single ``(du, dv)`` offset."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ShapeMismatchError(f"coords must be (N, 2), got {coords.shape}")
    d = np.asarray(delta, dtype=np.float64).reshape(2)
    return coords + d[None, :]


def _bilinear_plane(plane: FeaturePlane, u, v, ok):
    """Sample the plane at continuous ``(u, v)``; equirectangular planes wrap
    horizontally, raw planes invalidate out-of-range columns, and both
    invalidate out-of-range rows rather than clamping them."""
    w, h, c = plane.width, plane.height, plane.channels
    with np.errstate(invalid="ignore"):
        if plane.view == "equi":
            u = np.mod(u, float(w))
            u_ok = np.isfinite(u)
        else:
            u_ok = (u >= 0.0) & (u <= w - 1.0)
        v_ok = (v >= 0.0) & (v <= h - 1.0)
    valid = ok & u_ok & v_ok
    out = np.zeros((u.shape[0], c), dtype=np.float64)
    if np.any(valid):
        su = u[valid]
        sv = v[valid]
        i0f = np.floor(su)
        j0f = np.floor(sv)
        fu = (su - i0f)[:, None]
        fv = (sv - j0f)[:, None]
        i0 = i0f.astype(np.int64)
        j0 = j0f.astype(np.int64)
        if plane.view == "equi":
            i1 = np.mod(i0 + 1, w)
        else:
            i1 = np.minimum(i0 + 1, w - 1)
        j1 = np.minimum(j0 + 1, h - 1)
        d = plane.data
        top = (1.0 - fu) * d[j0, i0] + fu * d[j0, i1]
        bot = (1.0 - fu) * d[j1, i0] + fu * d[j1, i1]
        out[valid] = (1.0 - fv) * top + fv * bot
    return out, valid


def lift_volume(
    grid: CartesianGridSpec | PolarGridSpec,
    view: str,
    model: CameraModel,
    plane: FeaturePlane,
    delta=None,
) -> FeatureVolume:
    """Fill a volume by projecting every voxel centroid of ``grid`` into
    ``plane`` and sampling bilinearly.

    ``delta`` is an optional ``(du, dv)`` pixel shift applied to all
    projected coordinates before sampling (validity is judged after the
    shift).  Voxels whose projection is degenerate, outside the calibrated
    polar cone, or off the plane come back invalid with zero features.
    """
    if plane.view != view:
        raise DimMismatchError(f"plane holds a {plane.view!r} view, lift asked for {view!r}")
    if isinstance(grid, CartesianGridSpec):
        centroids = cartesian_centroids(grid)
    elif isinstance(grid, PolarGridSpec):
        centroids = polar_centroids(grid)
    else:
        raise DimMismatchError(f"unsupported grid type {type(grid).__name__}")
    u, v, ok = model.project_points(
        centroids, view, plane.width, plane.height, check_bounds=False
    )
    if delta is not None:
        shifted = apply_gdc(np.stack([u, v], axis=1), delta)
        u = shifted[:, 0]
        v = shifted[:, 1]
    data, valid = _bilinear_plane(plane, u, v, ok)
    return FeatureVolume(grid=grid, data=data, valid=valid)


def fuse_scales(volumes, weights: ScaleWeights | None = None) -> FeatureVolume:
    """Convex per-voxel combination of same-grid volumes.

    Weights are a per-voxel softmax over the scale logits (uniform when
    ``weights`` is None), renormalized over the scales that are valid at
    each voxel; a voxel with no valid scale is invalid in the result.  The
    result's validity is the union of the inputs'.
    """
    volumes = list(volumes)
    if not volumes:
        raise ShapeMismatchError("need at least one volume to fuse")
    g = volumes[0].grid
    c = volumes[0].channels
    n = volumes[0].data.shape[0]
    for vol in volumes[1:]:
        if vol.grid != g:
            raise GridMismatchError("fused volumes must share a grid spec")
        if vol.channels != c:
            raise ShapeMismatchError(
                f"fused volumes must share channels: {vol.channels} != {c}"
            )
    s = len(volumes)
    if weights is None:
        weights = ScaleWeights.uniform(n, s)
    logits = weights.logits
    if logits.shape != (n, s):
        raise ShapeMismatchError(
            f"weights are {logits.shape}, expected ({n}, {s})"
        )
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    alpha = e / e.sum(axis=1, keepdims=True)
    mask = np.stack([vol.valid for vol in volumes], axis=1)
    am = alpha * mask
    denom = am.sum(axis=1)
    vox_valid = denom > 0.0
    renorm = np.zeros_like(am)
    renorm[vox_valid] = am[vox_valid] / denom[vox_valid, None]
    out = np.zeros((n, c), dtype=np.float64)
    for k, vol in enumerate(volumes):
        out += renorm[:, k, None] * vol.data
    return FeatureVolume(grid=g, data=out, valid=vox_valid)
