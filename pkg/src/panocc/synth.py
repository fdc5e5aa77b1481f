"""Synthetic voxel worlds with known semantics, rendered to ideal panoramas.

These scenes exist so geometry can be tested end to end without any
dataset: every class carries a distinctive feature vector (its palette
row), a ray-march renderer produces the equirectangular plane such a world
would yield, and round-trip tests check that lifting recovers the palette
at the voxels that are actually visible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bigrid import CartesianGridSpec
from .camera import PI, TWO_PI
from .errors import BadGridError, ShapeMismatchError, UnknownPresetError
from .lifting import FeaturePlane
from .ssc import OccupancyGrid

__all__ = ["SynthScene", "render_equi", "visible_surface", "make_fixture"]

FIXTURE_CLASSES = 4

# One feature row per class; class 0 (empty) renders as zeros.  Every entry
# is a power of two (or zero) so fixture arithmetic stays exact under
# bilinear reweighting, and rows differ pairwise by at least 0.5.
_PALETTE = np.array(
    [
        [0.0, 0.0, 0.0, 0.0],
        [1.0, 0.5, 0.0, 0.25],
        [0.5, 1.0, 0.25, 0.0],
        [0.25, 0.0, 1.0, 0.5],
    ]
)


@dataclass
class SynthScene:
    """A labeled voxel world plus the rigid transform into the camera frame
    (``p_cam = rotation @ p_grid + translation``)."""

    grid: CartesianGridSpec
    occupancy: OccupancyGrid
    palette: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.palette = np.asarray(self.palette, dtype=np.float64)
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.occupancy.labels.shape != (self.grid.nx, self.grid.ny, self.grid.nz):
            raise BadGridError(
                f"occupancy {self.occupancy.labels.shape} does not match grid "
                f"{(self.grid.nx, self.grid.ny, self.grid.nz)}"
            )
        if self.palette.ndim != 2:
            raise ShapeMismatchError(f"palette must be (C, F), got {self.palette.shape}")
        if self.occupancy.labels.max(initial=0) >= self.palette.shape[0]:
            raise ShapeMismatchError("occupancy references classes beyond the palette")
        if self.rotation.shape != (3, 3):
            raise ShapeMismatchError(f"rotation must be 3x3, got {self.rotation.shape}")
        c = self.palette.shape[0]
        for i in range(c):
            for j in range(i + 1, c):
                gap = float(np.max(np.abs(self.palette[i] - self.palette[j])))
                if gap < 0.1:
                    raise ShapeMismatchError(
                        f"palette rows {i} and {j} differ by only {gap:.3f}; "
                        "classes would be indistinguishable"
                    )


def _march(scene: SynthScene, width, height):
    """Shared ray-march: for every pixel, the class and voxel index of the
    first occupied voxel along its viewing ray (class 0 / index -1 on miss).

    Rays start at the camera center, sampled every quarter of the smallest
    voxel edge; the grid is convex, so a ray that has been inside and steps
    out is finished.
    """
    g = scene.grid
    u = np.arange(width, dtype=np.float64)
    v = np.arange(height, dtype=np.float64)
    phi = (TWO_PI / width) * u - PI
    theta = PI / 2.0 - (PI / height) * v
    ct = np.cos(theta)[:, None]
    st = np.sin(theta)[:, None]
    cp = np.cos(phi)[None, :]
    sp = np.sin(phi)[None, :]
    d_cam = np.stack(
        [
            np.broadcast_to(ct * cp, (height, width)),
            np.broadcast_to(ct * sp, (height, width)),
            np.broadcast_to(st, (height, width)),
        ],
        axis=2,
    ).reshape(-1, 3)
    d_grid = d_cam @ scene.rotation
    o_grid = (-scene.translation) @ scene.rotation
    step = min(g.dx, g.dy, g.dz) / 4.0
    ext = np.array([g.nx * g.dx, g.ny * g.dy, g.nz * g.dz])
    t_cap = float(np.linalg.norm(ext)) + float(np.linalg.norm(o_grid)) + step
    n_steps = int(np.ceil(t_cap / step))
    origin = np.array([g.x0, g.y0, g.z0])
    edges = np.array([g.dx, g.dy, g.dz])
    counts = np.array([g.nx, g.ny, g.nz])
    labels = scene.occupancy.labels
    n_rays = d_grid.shape[0]
    hit_class = np.zeros(n_rays, dtype=np.int64)
    hit_index = np.full((n_rays, 3), -1, dtype=np.int64)
    active = np.ones(n_rays, dtype=bool)
    entered = np.zeros(n_rays, dtype=bool)
    for m in range(1, n_steps + 1):
        ids = np.flatnonzero(active)
        if ids.size == 0:
            break
        pos = o_grid[None, :] + (m * step) * d_grid[ids]
        cell = np.floor((pos - origin[None, :]) / edges[None, :]).astype(np.int64)
        inside = np.all((cell >= 0) & (cell < counts[None, :]), axis=1)
        leave = entered[ids] & ~inside
        entered[ids] |= inside
        ii = ids[inside]
        ci = cell[inside]
        cls = labels[ci[:, 0], ci[:, 1], ci[:, 2]]
        struck = cls > 0
        hit_ids = ii[struck]
        hit_class[hit_ids] = cls[struck]
        hit_index[hit_ids] = ci[struck]
        active[hit_ids] = False
        active[ids[leave]] = False
    return hit_class.reshape(height, width), hit_index.reshape(height, width, 3)


def render_equi(scene: SynthScene, width, height) -> FeaturePlane:
    """Ideal equirectangular feature plane of the scene: every pixel carries
    the palette row of the first occupied voxel its ray meets (zeros on a
    miss)."""
    hit_class, _ = _march(scene, width, height)
    zero = np.zeros((1, scene.palette.shape[1]))
    table = np.concatenate([zero, scene.palette[1:]], axis=0)
    data = table[hit_class]
    return FeaturePlane(
        data=data, scale=1, view="equi", valid=np.ones((height, width), dtype=bool)
    )


def visible_surface(scene: SynthScene, width, height) -> np.ndarray:
    """Boolean ``(nx, ny, nz)`` mask of voxels some ray hits first when the
    scene is rendered at the given resolution."""
    _, hit_index = _march(scene, width, height)
    out = np.zeros(
        (scene.grid.nx, scene.grid.ny, scene.grid.nz), dtype=bool
    )
    flat = hit_index.reshape(-1, 3)
    flat = flat[flat[:, 0] >= 0]
    out[flat[:, 0], flat[:, 1], flat[:, 2]] = True
    return out


_FIXTURE_GRID = CartesianGridSpec(
    nx=16, ny=16, nz=4,
    x0=-3.2, y0=-3.2, z0=-0.8,
    dx=0.4, dy=0.4, dz=0.4,
)


def _ring_labels() -> np.ndarray:
    """A square ring of wall one voxel thick at Chebyshev distance 5.5 from
    the grid center, full height, with gaps carved around the four diagonal
    azimuths.  Lower half is class 1, upper half class 2.  The rule depends
    on (i, j) only through quantities symmetric under quarter turns, so the
    occupancy is invariant under 90-degree grid rotation."""
    n = 16
    idx = np.arange(n, dtype=np.float64) + 0.5 - 8.0
    di = idx[:, None]
    dj = idx[None, :]
    cheb = np.maximum(np.abs(di), np.abs(dj))
    on_ring = cheb == 5.5
    azimuth = np.arctan2(dj, di)
    folded = np.mod(azimuth, PI / 2.0)
    gap = np.abs(folded - PI / 4.0) < 0.12
    wall = on_ring & ~gap
    labels = np.zeros((n, n, 4), dtype=np.int64)
    labels[:, :, 0][wall] = 1
    labels[:, :, 1][wall] = 1
    labels[:, :, 2][wall] = 2
    labels[:, :, 3][wall] = 2
    return labels


def _corridor_labels(rng: np.random.Generator) -> np.ndarray:
    """Ground slab (class 2) at the bottom layer plus two full-length walls
    (class 1) along x at rows j=3 and j=12, rising ``h`` layers above the
    ground with ``h`` drawn from {2, 3}.  Occupied voxel count is therefore
    exactly ``nx*ny + 2*nx*h``."""
    h = int(rng.integers(2, 4))
    labels = np.zeros((16, 16, 4), dtype=np.int64)
    labels[:, :, 0] = 2
    for j in (3, 12):
        labels[:, j, 1 : 1 + h] = 1
    return labels


def _clutter_labels(rng: np.random.Generator) -> np.ndarray:
    """Twelve random axis-aligned boxes (1-3 voxels per side, random
    semantic class), unioned; a 2x2 column around the camera is cleared so
    rays are never born inside matter."""
    labels = np.zeros((16, 16, 4), dtype=np.int64)
    for _ in range(12):
        sx, sy, sz = (int(s) for s in rng.integers(1, 4, size=3))
        ix = int(rng.integers(0, 16 - sx + 1))
        iy = int(rng.integers(0, 16 - sy + 1))
        iz = int(rng.integers(0, 4 - sz + 1))
        cls = int(rng.integers(1, FIXTURE_CLASSES))
        labels[ix : ix + sx, iy : iy + sy, iz : iz + sz] = cls
    labels[7:9, 7:9, :] = 0
    return labels


def make_fixture(seed: int, preset: str) -> SynthScene:
    """Deterministic 16x16x4 test world (0.4 m voxels, camera at the grid
    center).  Presets: ``corridor``, ``ring``, ``clutter`` — construction
    rules live in the helpers above."""
    rng = np.random.default_rng(seed)
    if preset == "ring":
        labels = _ring_labels()
    elif preset == "corridor":
        labels = _corridor_labels(rng)
    elif preset == "clutter":
        labels = _clutter_labels(rng)
    else:
        raise UnknownPresetError(
            f"unknown preset {preset!r} (expected corridor, ring, or clutter)"
        )
    return SynthScene(
        grid=_FIXTURE_GRID,
        occupancy=OccupancyGrid(labels=labels),
        palette=_PALETTE.copy(),
        rotation=np.eye(3),
        translation=np.zeros(3),
    )
