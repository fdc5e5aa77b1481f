"""Cartesian and polar voxel grids plus the index tables linking them.

Both grid flavors flatten voxels in a fixed row-major order:

* Cartesian ``(i, j, k)`` -> ``(k * ny + j) * nx + i``  (x fastest)
* polar ``(p, q, kz)``    -> ``(kz * nphi + q) * nr + p``  (radius fastest)

Centroids sit at half-integer offsets inside each cell.  Coarser grid
levels divide every axis count by the level (rounded up) while keeping the
origin and total azimuthal coverage, so level-``l`` voxels are exactly
``l``-blocks of level-1 voxels along each axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .camera import PI, TWO_PI, wrap_angle
from .errors import BadGridError, IndexOutOfRangeError, LevelMismatchError

__all__ = [
    "CartesianGridSpec",
    "PolarGridSpec",
    "CrossIndexTable",
    "cartesian_centroids",
    "polar_centroids",
    "build_cross_indices",
    "default_cartesian",
    "default_polar_for",
]


@dataclass(frozen=True)
class CartesianGridSpec:
    """Axis-aligned voxel grid: counts, minimum corner, edge lengths."""

    nx: int
    ny: int
    nz: int
    x0: float
    y0: float
    z0: float
    dx: float
    dy: float
    dz: float

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise BadGridError(f"voxel counts must be positive: {self.nx}x{self.ny}x{self.nz}")
        if min(self.dx, self.dy, self.dz) <= 0.0:
            raise BadGridError(f"edge lengths must be positive: {self.dx}, {self.dy}, {self.dz}")

    @property
    def voxel_count(self):
        return self.nx * self.ny * self.nz

    def at_level(self, level: int) -> "CartesianGridSpec":
        """Coarsened spec: counts divided by ``level`` (ceil), edges scaled."""
        if level < 1:
            raise BadGridError(f"level must be >= 1, got {level}")
        return CartesianGridSpec(
            nx=math.ceil(self.nx / level),
            ny=math.ceil(self.ny / level),
            nz=math.ceil(self.nz / level),
            x0=self.x0,
            y0=self.y0,
            z0=self.z0,
            dx=self.dx * level,
            dy=self.dy * level,
            dz=self.dz * level,
        )


@dataclass(frozen=True)
class PolarGridSpec:
    """Cylindrical voxel grid: radial ring counts, full-circle azimuth bins,
    vertical slabs.  ``r0``/``r1`` bound the radial annulus; azimuth always
    spans the full ``[-pi, pi)`` circle."""

    nr: int
    nphi: int
    nz: int
    r0: float
    r1: float
    z0: float
    dz: float

    def __post_init__(self):
        if min(self.nr, self.nphi, self.nz) < 1:
            raise BadGridError(f"bin counts must be positive: {self.nr}x{self.nphi}x{self.nz}")
        if not (0.0 <= self.r0 < self.r1):
            raise BadGridError(f"need 0 <= r0 < r1, got r0={self.r0}, r1={self.r1}")
        if self.dz <= 0.0:
            raise BadGridError(f"dz must be positive, got {self.dz}")

    @property
    def voxel_count(self):
        return self.nr * self.nphi * self.nz

    @property
    def dr(self):
        return (self.r1 - self.r0) / self.nr

    @property
    def dphi(self):
        return TWO_PI / self.nphi

    def at_level(self, level: int) -> "PolarGridSpec":
        """Coarsened spec: bin counts divided by ``level`` (ceil); the radial
        step scales by ``level`` (so ``r1`` grows when ``nr % level != 0``),
        azimuth keeps covering the full circle."""
        if level < 1:
            raise BadGridError(f"level must be >= 1, got {level}")
        nr = math.ceil(self.nr / level)
        return PolarGridSpec(
            nr=nr,
            nphi=math.ceil(self.nphi / level),
            nz=math.ceil(self.nz / level),
            r0=self.r0,
            r1=self.r0 + nr * (self.dr * level),
            z0=self.z0,
            dz=self.dz * level,
        )


def cartesian_centroids(spec: CartesianGridSpec) -> np.ndarray:
    """``(N, 3)`` voxel centers in flat order (x fastest, then y, then z)."""
    x = spec.x0 + (np.arange(spec.nx, dtype=np.float64) + 0.5) * spec.dx
    y = spec.y0 + (np.arange(spec.ny, dtype=np.float64) + 0.5) * spec.dy
    z = spec.z0 + (np.arange(spec.nz, dtype=np.float64) + 0.5) * spec.dz
    out = np.empty((spec.nz, spec.ny, spec.nx, 3), dtype=np.float64)
    out[:, :, :, 0] = x[None, None, :]
    out[:, :, :, 1] = y[None, :, None]
    out[:, :, :, 2] = z[:, None, None]
    return out.reshape(-1, 3)


def polar_centroids(spec: PolarGridSpec) -> np.ndarray:
    """``(N, 3)`` Cartesian coordinates of polar bin centers, flat order
    (radius fastest, then azimuth, then z)."""
    step_r = (spec.r1 - spec.r0) / spec.nr
    step_phi = TWO_PI / spec.nphi
    r = spec.r0 + (np.arange(spec.nr, dtype=np.float64) + 0.5) * step_r
    phi = -PI + (np.arange(spec.nphi, dtype=np.float64) + 0.5) * step_phi
    z = spec.z0 + (np.arange(spec.nz, dtype=np.float64) + 0.5) * spec.dz
    out = np.empty((spec.nz, spec.nphi, spec.nr, 3), dtype=np.float64)
    out[:, :, :, 0] = (r[None, :] * np.cos(phi)[:, None])[None, :, :]
    out[:, :, :, 1] = (r[None, :] * np.sin(phi)[:, None])[None, :, :]
    out[:, :, :, 2] = z[:, None, None]
    return out.reshape(-1, 3)


def _bin_lower(t, width, n):
    """Uniform binning where values exactly on an interior boundary fall to
    the LOWER bin; everything is clamped to ``[0, n-1]``."""
    b = np.ceil(t / width) - 1.0
    return np.clip(b, 0.0, n - 1.0).astype(np.int64)


@dataclass(frozen=True)
class CrossIndexTable:
    """For every Cartesian voxel (at some level), the flat index of the polar
    bin containing its centroid.  Carries the level-``l`` specs it was built
    for so consumers can reject mismatched volumes."""

    level: int
    ca_spec: CartesianGridSpec
    po_spec: PolarGridSpec
    indices: np.ndarray

    def __post_init__(self):
        if self.level not in (1, 2, 4):
            raise BadGridError(f"level must be 1, 2, or 4, got {self.level}")
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.shape != (self.ca_spec.voxel_count,):
            raise LevelMismatchError(
                f"index table has {idx.shape} entries, grid has "
                f"{self.ca_spec.voxel_count} voxels"
            )
        if idx.size and (idx.min() < 0 or idx.max() >= self.po_spec.voxel_count):
            raise IndexOutOfRangeError("cross-grid index outside the polar grid")
        object.__setattr__(self, "indices", idx)


def build_cross_indices(
    ca: CartesianGridSpec, po: PolarGridSpec, level: int = 1
) -> CrossIndexTable:
    """Map each level-``level`` Cartesian voxel centroid into the polar grid.

    The centroid's cylinder coordinates ``(r, phi, z)`` are binned uniformly;
    values exactly on a bin boundary go to the lower bin, radii/heights
    outside the polar extent clamp to the boundary bins, and a centroid at
    exactly ``r = 0`` lands in azimuth bin 0.
    """
    ca_l = ca.at_level(level)
    po_l = po.at_level(level)
    c = cartesian_centroids(ca_l)
    x, y, z = c[:, 0], c[:, 1], c[:, 2]
    r = np.hypot(x, y)
    phi = wrap_angle(np.arctan2(y, x))
    p = _bin_lower(r - po_l.r0, po_l.dr, po_l.nr)
    q = _bin_lower(phi + PI, po_l.dphi, po_l.nphi)
    q[(x == 0.0) & (y == 0.0)] = 0
    kz = _bin_lower(z - po_l.z0, po_l.dz, po_l.nz)
    idx = (kz * po_l.nphi + q) * po_l.nr + p
    return CrossIndexTable(level=level, ca_spec=ca_l, po_spec=po_l, indices=idx)


def default_cartesian(name: str) -> CartesianGridSpec:
    """Stock grid geometries: ``"coarse"`` (64x64x8 at 0.4 m) and ``"fine"``
    (128x128x16 at 0.2 m), both spanning 25.6 x 25.6 x 3.2 m centered on
    the sensor."""
    if name == "coarse":
        n, d = (64, 64, 8), (0.4, 0.4, 0.4)
    elif name == "fine":
        n, d = (128, 128, 16), (0.2, 0.2, 0.2)
    else:
        raise BadGridError(f"unknown default grid {name!r} (expected 'coarse' or 'fine')")
    ext = (n[0] * d[0], n[1] * d[1], n[2] * d[2])
    return CartesianGridSpec(
        nx=n[0], ny=n[1], nz=n[2],
        x0=-ext[0] / 2.0, y0=-ext[1] / 2.0, z0=-ext[2] / 2.0,
        dx=d[0], dy=d[1], dz=d[2],
    )


def default_polar_for(ca: CartesianGridSpec) -> PolarGridSpec:
    """Companion polar grid: half the radial rings of ``nx``, twice the
    azimuth bins, same vertical slabs, radius covering the grid diagonal."""
    r1 = float(np.hypot(ca.nx * ca.dx / 2.0, ca.ny * ca.dy / 2.0))
    return PolarGridSpec(
        nr=ca.nx // 2,
        nphi=2 * ca.nx,
        nz=ca.nz,
        r0=0.0,
        r1=r1,
        z0=ca.z0,
        dz=ca.dz,
    )
