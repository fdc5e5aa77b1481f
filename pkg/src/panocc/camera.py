"""Calibrated panoramic annular lens model and pixel/angle conversions.

Angle conventions
-----------------
Two angles describe a viewing direction:

``phi``
    Azimuth in the horizontal plane, wrapped to ``[-pi, pi)``.
``theta``
    Elevation above the horizontal plane, so ``+pi/2`` looks straight up.

The equirectangular (unwrapped) image maps pixels linearly to angles::

    phi   = 2*pi/W * u - pi
    theta = pi/2 - pi/H * v

so row ``v = 0`` is the zenith row.  The lens radial polynomial, by
contrast, is parameterized by the *polar* angle measured down from the
optical axis, ``theta_p = pi/2 - theta``; ``CameraModel.theta_min`` and
``theta_max`` bound that polar angle.  This module is the single place
where the two conventions meet — every function below states which angle
it takes.

Raw annular pixel coordinates are produced by the radial polynomial
``r(theta_p) = sum_i a_i * theta_p**i`` followed by an affine distortion::

    [u_raw, v_raw] = [u0, v0] + A @ (r * [cos(phi), sin(phi)])
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegeneratePointError,
    FormatError,
    NoConvergenceError,
    NonInvertibleError,
    OutOfRangeError,
)

PI = np.pi
TWO_PI = 2.0 * np.pi

_MONOTONE_SAMPLES = 4096


def wrap_angle(phi):
    """Wrap an azimuth (scalar or array) to ``[-pi, pi)``."""
    return np.mod(phi + PI, TWO_PI) - PI


@dataclass(frozen=True)
class SphericalAngles:
    """A viewing direction: azimuth ``phi`` (wrapped) and elevation ``theta``."""

    phi: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "phi", float(wrap_angle(float(self.phi))))
        object.__setattr__(self, "theta", float(self.theta))


def equi_to_angles(u, v, width, height, v_flip=False):
    """Angles seen by equirectangular pixel ``(u, v)`` on a ``width x height`` plane.

    ``u`` and ``v`` are continuous pixel coordinates with ``0 <= u < width``
    and ``0 <= v <= height - 1``.  With ``v_flip`` the vertical axis of the
    stored image runs bottom-up and ``v`` is mirrored before the linear map.
    """
    u = float(u)
    v = float(v)
    if not (0.0 <= u < width):
        raise OutOfRangeError(f"u={u} outside [0, {width})")
    if not (0.0 <= v <= height - 1):
        raise OutOfRangeError(f"v={v} outside [0, {height - 1}]")
    if v_flip:
        v = (height - 1) - v
    phi = (TWO_PI / width) * u - PI
    theta = PI / 2.0 - (PI / height) * v
    return SphericalAngles(phi=phi, theta=theta)


def _equi_angle_arrays(u, v, width, height, v_flip=False):
    """Vectorized core of :func:`equi_to_angles` (no range checks)."""
    if v_flip:
        v = (height - 1) - v
    phi = (TWO_PI / width) * u - PI
    theta = PI / 2.0 - (PI / height) * v
    return phi, theta


@dataclass(frozen=True)
class CameraModel:
    """Polynomial annular-lens calibration.

    Parameters
    ----------
    a : array_like
        Radial polynomial coefficients, ascending degree; evaluated in the
        polar angle ``theta_p``.
    u0, v0 : float
        Principal point in raw pixels.
    A : array_like, shape (2, 2)
        Affine distortion applied to the ideal radial displacement.
    theta_min, theta_max : float
        Polar-angle domain of the polynomial, ``0 <= theta_min < theta_max <= pi``.
        ``r`` must be strictly monotone on this range (checked on a uniform
        4096-point sample at construction).
    w_raw, h_raw : int
        Raw sensor dimensions in pixels.
    v_flip : bool
        Whether equirectangular planes paired with this calibration store
        rows bottom-up.
    """

    a: np.ndarray
    u0: float
    v0: float
    A: np.ndarray
    theta_min: float
    theta_max: float
    w_raw: int
    h_raw: int
    v_flip: bool = False
    _increasing: bool = field(init=False, repr=False, compare=False, default=True)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        if a.ndim != 1 or a.size == 0:
            raise NonInvertibleError("polynomial coefficients must be a non-empty 1-D array")
        A = np.asarray(self.A, dtype=np.float64)
        if A.shape != (2, 2):
            raise NonInvertibleError(f"A must be 2x2, got {A.shape}")
        det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
        if abs(det) <= 1e-12:
            raise NonInvertibleError(f"affine distortion is singular (|det|={abs(det):.3e})")
        if not (0.0 <= self.theta_min < self.theta_max <= PI):
            raise OutOfRangeError(
                f"polar range [{self.theta_min}, {self.theta_max}] not within [0, pi]"
            )
        if self.w_raw < 2 or self.h_raw < 2:
            raise OutOfRangeError("raw dimensions must be at least 2x2")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "A", A)
        thetas = np.linspace(self.theta_min, self.theta_max, _MONOTONE_SAMPLES)
        r = self._horner(thetas)
        d = np.diff(r)
        if np.all(d > 0.0):
            object.__setattr__(self, "_increasing", True)
        elif np.all(d < 0.0):
            object.__setattr__(self, "_increasing", False)
        else:
            raise NonInvertibleError(
                "radial polynomial is not strictly monotone on the polar range"
            )

    # -- radial polynomial ------------------------------------------------

    def _horner(self, theta_p):
        acc = np.full_like(np.asarray(theta_p, dtype=np.float64), self.a[-1])
        for c in self.a[-2::-1]:
            acc = acc * theta_p + c
        return acc

    def _horner_deriv(self, theta_p):
        n = self.a.size
        if n == 1:
            return 0.0
        acc = self.a[-1] * (n - 1)
        for k in range(n - 2, 0, -1):
            acc = acc * theta_p + self.a[k] * k
        return acc

    def radial_distance(self, theta_p):
        """Image radius for polar angle ``theta_p`` (scalar or array).

        Raises :class:`OutOfRangeError` if any value falls outside
        ``[theta_min, theta_max]``.
        """
        t = np.asarray(theta_p, dtype=np.float64)
        if np.any(t < self.theta_min) or np.any(t > self.theta_max):
            raise OutOfRangeError("polar angle outside calibrated range")
        r = self._horner(t)
        return float(r) if np.isscalar(theta_p) or t.ndim == 0 else r

    def invert_radial(self, r_target):
        """Polar angle at which the radial polynomial equals ``r_target``.

        Safeguarded Newton iteration (bisection fallback) on the calibrated
        range; converges to ``|r(theta) - r_target| <= 1e-9 * max(1, |r_target|)``
        or raises :class:`NoConvergenceError` after 100 steps.  Radii outside
        the achievable span raise :class:`OutOfRangeError`.
        """
        r_target = float(r_target)
        tol = 1e-9 * max(1.0, abs(r_target))
        r_at_min = float(self._horner(self.theta_min))
        r_at_max = float(self._horner(self.theta_max))
        lo_val, hi_val = min(r_at_min, r_at_max), max(r_at_min, r_at_max)
        if r_target < lo_val - tol or r_target > hi_val + tol:
            raise OutOfRangeError(
                f"radius {r_target} outside achievable span [{lo_val}, {hi_val}]"
            )
        if abs(r_at_min - r_target) <= tol:
            return self.theta_min
        if abs(r_at_max - r_target) <= tol:
            return self.theta_max
        sign = 1.0 if self._increasing else -1.0
        lo, hi = self.theta_min, self.theta_max
        theta = 0.5 * (lo + hi)
        for _ in range(100):
            f = float(self._horner(theta)) - r_target
            if abs(f) <= tol:
                return theta
            if sign * f > 0.0:
                hi = theta
            else:
                lo = theta
            df = float(self._horner_deriv(theta))
            if df != 0.0:
                step = theta - f / df
                theta = step if lo < step < hi else 0.5 * (lo + hi)
            else:
                theta = 0.5 * (lo + hi)
        raise NoConvergenceError(f"no convergence inverting radius {r_target}")

    # -- projection -------------------------------------------------------

    def forward_project_raw(self, angles: SphericalAngles):
        """Raw pixel ``(u_raw, v_raw)`` seen along ``angles``.

        ``angles.theta`` is an elevation; the polar angle fed to the radial
        polynomial is ``pi/2 - theta`` and must lie in the calibrated range.
        """
        theta_p = PI / 2.0 - angles.theta
        if not (self.theta_min <= theta_p <= self.theta_max):
            raise OutOfRangeError(
                f"polar angle {theta_p} outside [{self.theta_min}, {self.theta_max}]"
            )
        r = float(self._horner(theta_p))
        rc = r * np.cos(angles.phi)
        rs = r * np.sin(angles.phi)
        u = self.u0 + (self.A[0, 0] * rc + self.A[0, 1] * rs)
        v = self.v0 + (self.A[1, 0] * rc + self.A[1, 1] * rs)
        return float(u), float(v)

    def project_points(self, points, view, width, height, check_bounds=True):
        """Project camera-frame 3-D points onto a ``width x height`` plane.

        Parameters
        ----------
        points : array_like, shape (N, 3)
        view : {"equi", "raw"}
            Target plane geometry.  ``"raw"`` coordinates are produced at
            full sensor resolution and then scaled by ``width / w_raw`` and
            ``height / h_raw``.
        width, height : int
            Plane dimensions at the target scale.
        check_bounds : bool
            When False, ``valid`` reflects only the viewing geometry
            (non-degenerate point inside the calibrated cone), leaving
            plane-extent checks to the caller — used by samplers that shift
            coordinates before deciding validity.

        Returns
        -------
        (u, v, valid) : three arrays of shape (N,)
            ``valid`` is False for near-zero points, polar angles outside the
            calibrated cone, or (with ``check_bounds``) coordinates falling
            off the plane; the equirectangular view only checks the vertical
            extent there — the horizontal axis wraps.
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        rho = np.hypot(x, y)
        norm = np.sqrt(x * x + y * y + z * z)
        degenerate = norm < 1e-9
        phi = wrap_angle(np.arctan2(y, x))
        theta = np.arctan2(z, rho)
        theta_p = PI / 2.0 - theta
        ok = (theta_p >= self.theta_min) & (theta_p <= self.theta_max) & ~degenerate
        if view == "equi":
            u = (phi + PI) * width / TWO_PI
            v = (PI / 2.0 - theta) * height / PI
            if self.v_flip:
                v = (height - 1.0) - v
            valid = ok & (v >= 0.0) & (v <= height - 1.0) if check_bounds else ok
        elif view == "raw":
            r = self._horner(theta_p)
            rc = r * np.cos(phi)
            rs = r * np.sin(phi)
            u_full = self.u0 + (self.A[0, 0] * rc + self.A[0, 1] * rs)
            v_full = self.v0 + (self.A[1, 0] * rc + self.A[1, 1] * rs)
            u = u_full * (width / self.w_raw)
            v = v_full * (height / self.h_raw)
            if check_bounds:
                valid = (
                    ok
                    & (u >= 0.0)
                    & (u <= width - 1.0)
                    & (v >= 0.0)
                    & (v <= height - 1.0)
                )
            else:
                valid = ok
        else:
            raise ValueError(f"view must be 'equi' or 'raw', got {view!r}")
        return u, v, valid

    def project_point(self, point, view, width, height):
        """Scalar variant of :meth:`project_points`.

        Raises :class:`DegeneratePointError` for points with norm below 1e-9
        instead of flagging them; otherwise returns ``(u, v, valid)``.
        """
        p = np.asarray(point, dtype=np.float64).reshape(1, 3)
        if float(np.sqrt(p[0, 0] ** 2 + p[0, 1] ** 2 + p[0, 2] ** 2)) < 1e-9:
            raise DegeneratePointError(
                f"point {tuple(p[0])} too close to the camera center"
            )
        u, v, valid = self.project_points(p, view, width, height)
        return float(u[0]), float(v[0]), bool(valid[0])


# -- calibration files ----------------------------------------------------

_REQUIRED_FIELDS = ("a", "u0", "v0", "A", "theta_min", "theta_max", "w_raw", "h_raw")


def model_from_dict(d) -> CameraModel:
    missing = [k for k in _REQUIRED_FIELDS if k not in d]
    if missing:
        raise FormatError(f"calibration missing fields: {', '.join(missing)}")
    return CameraModel(
        a=np.asarray(d["a"], dtype=np.float64),
        u0=float(d["u0"]),
        v0=float(d["v0"]),
        A=np.asarray(d["A"], dtype=np.float64),
        theta_min=float(d["theta_min"]),
        theta_max=float(d["theta_max"]),
        w_raw=int(d["w_raw"]),
        h_raw=int(d["h_raw"]),
        v_flip=bool(d.get("v_flip", False)),
    )


def model_to_dict(model: CameraModel) -> dict:
    return {
        "a": [float(c) for c in model.a],
        "u0": model.u0,
        "v0": model.v0,
        "A": [[float(model.A[i, j]) for j in range(2)] for i in range(2)],
        "theta_min": model.theta_min,
        "theta_max": model.theta_max,
        "w_raw": model.w_raw,
        "h_raw": model.h_raw,
        "v_flip": model.v_flip,
    }


def load_calibration(path) -> CameraModel:
    """Load a JSON calibration file (see README for the schema)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: invalid JSON ({e})") from e
    return model_from_dict(d)


def save_calibration(model: CameraModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")
