"""Annular-to-equirectangular unwrapping via precomputed remap tables.

A :class:`RemapTable` stores, for every output pixel of the unwrapped
panorama, the continuous raw-sensor coordinate it samples (or NaN where the
pixel sees no calibrated part of the annulus).  Building the table is pure
geometry — :func:`apply_remap` then resamples any number of images with the
same calibration at bilinear cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import PI, TWO_PI, CameraModel
from .errors import DimMismatchError

__all__ = ["ImagePlane", "RemapTable", "build_remap", "apply_remap"]


@dataclass
class ImagePlane:
    """A dense ``(H, W, C)`` float image with an optional validity mask.

    ``fill_value`` is the value resampling writes at pixels outside the
    source footprint.
    """

    data: np.ndarray
    fill_value: float = 0.0
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 2:
            self.data = self.data[:, :, None]
        if self.data.ndim != 3:
            raise DimMismatchError(f"image must be (H, W, C), got shape {self.data.shape}")
        if self.valid is not None:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.data.shape[:2]:
                raise DimMismatchError(
                    f"validity mask {self.valid.shape} does not match image "
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
class RemapTable:
    """Per-output-pixel source coordinates for one calibration and output size.

    ``src_u``/``src_v`` are ``(height, width)`` float64 arrays holding raw
    pixel coordinates, NaN wherever ``valid`` is False.  ``raw_w``/``raw_h``
    record the raw image size the table was built for so that
    :func:`apply_remap` can reject mismatched inputs.
    """

    width: int
    height: int
    raw_w: int
    raw_h: int
    src_u: np.ndarray = field(repr=False)
    src_v: np.ndarray = field(repr=False)
    valid: np.ndarray = field(repr=False)

    def __post_init__(self):
        shape = (self.height, self.width)
        for name in ("src_u", "src_v", "valid"):
            arr = getattr(self, name)
            if arr.shape != shape:
                raise DimMismatchError(f"{name} has shape {arr.shape}, expected {shape}")

    def _gather_plan(self):
        """Resampling constants shared by every image this table remaps:
        flat output positions, the four source corner indices, and the
        bilinear weights.  Built once, on first use."""
        plan = self.__dict__.get("_plan")
        if plan is None:
            idx = np.flatnonzero(self.valid.reshape(-1))
            su = self.src_u.reshape(-1)[idx]
            sv = self.src_v.reshape(-1)[idx]
            i0f = np.floor(su)
            j0f = np.floor(sv)
            fu = (su - i0f)[:, None]
            fv = (sv - j0f)[:, None]
            i0 = i0f.astype(np.int64)
            j0 = j0f.astype(np.int64)
            i1 = np.minimum(i0 + 1, self.raw_w - 1)
            j1 = np.minimum(j0 + 1, self.raw_h - 1)
            w = self.raw_w
            plan = (idx, j0 * w + i0, j0 * w + i1, j1 * w + i0, j1 * w + i1,
                    1.0 - fu, fu, 1.0 - fv, fv)
            self.__dict__["_plan"] = plan
        return plan


def build_remap(width, height, model: CameraModel) -> RemapTable:
    """Remap table for unwrapping onto a ``width x height`` equirectangular plane.

    Each output pixel ``(u, v)`` looks along the azimuth/elevation of the
    linear pixel-angle map (honoring ``model.v_flip``) and samples the raw
    annulus wherever the polar angle lies in the calibrated cone and the
    projected source coordinate stays inside the raw bounds
    ``[0, w_raw-1] x [0, h_raw-1]``; elsewhere the pixel is invalid.
    Output columns never wrap in raw space — each samples its own azimuth.
    """
    u = np.arange(width, dtype=np.float64)[None, :]
    v = np.arange(height, dtype=np.float64)[:, None]
    if model.v_flip:
        v = (height - 1) - v
    phi = (TWO_PI / width) * u - PI
    theta = PI / 2.0 - (PI / height) * v
    theta_p = PI / 2.0 - theta
    in_cone = (theta_p >= model.theta_min) & (theta_p <= model.theta_max)
    r = model._horner(theta_p)
    rc = r * np.cos(phi)
    rs = r * np.sin(phi)
    su = model.u0 + (model.A[0, 0] * rc + model.A[0, 1] * rs)
    sv = model.v0 + (model.A[1, 0] * rc + model.A[1, 1] * rs)
    in_cone = np.broadcast_to(in_cone, (height, width))
    valid = (
        in_cone
        & (su >= 0.0)
        & (su <= model.w_raw - 1.0)
        & (sv >= 0.0)
        & (sv <= model.h_raw - 1.0)
    )
    su = np.where(valid, su, np.nan)
    sv = np.where(valid, sv, np.nan)
    return RemapTable(
        width=width,
        height=height,
        raw_w=model.w_raw,
        raw_h=model.h_raw,
        src_u=su,
        src_v=sv,
        valid=valid,
    )


def apply_remap(img: ImagePlane, table: RemapTable) -> ImagePlane:
    """Bilinearly resample ``img`` through ``table``.

    The image must match the raw dimensions the table was built for.
    Invalid output pixels receive ``img.fill_value``; the returned plane
    carries the table's validity mask.  At the exact right/bottom raw edge
    the out-of-range bilinear neighbor has weight zero and is clamped, so
    boundary samples stay well-defined.
    """
    if (img.width, img.height) != (table.raw_w, table.raw_h):
        raise DimMismatchError(
            f"image is {img.width}x{img.height}, table expects raw "
            f"{table.raw_w}x{table.raw_h}"
        )
    h, w, c = table.height, table.width, img.channels
    out = np.full((h, w, c), img.fill_value, dtype=np.float64)
    idx, k00, k01, k10, k11, wu0, wu1, wv0, wv1 = table._gather_plan()
    if idx.size:
        d = img.data.reshape(-1, c)
        top = wu0 * d[k00] + wu1 * d[k01]
        bot = wu0 * d[k10] + wu1 * d[k11]
        out.reshape(-1, c)[idx] = wv0 * top + wv1 * bot
    return ImagePlane(data=out, fill_value=img.fill_value, valid=table.valid.copy())
