"""Volume refinement: polar feature injection, dual saliency gating, and a
gradient-energy-routed mixture of per-voxel experts.

All operations act on :class:`~panocc.lifting.FeatureVolume` rows and are
pure functions of their inputs.  Expert mixtures sum contributions in
value-sorted order, which makes the result bit-identical under any
permutation of the experts (floating-point addition commutes but does not
associate; sorting fixes the reduction to a function of the value multiset).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi
from scipy import special

from .errors import (
    FormatError,
    LevelMismatchError,
    ShapeMismatchError,
)
from .lifting import FeatureVolume
from .bigrid import CrossIndexTable
from .ptns import read_ptns, write_ptns

__all__ = [
    "PointwiseAffine",
    "SaliencyParams",
    "MoeParams",
    "inject_polar",
    "channel_gate",
    "spatial_gate",
    "apply_saliency",
    "grad_energy3d",
    "grad_energy_total",
    "grad_energy_backward",
    "moe_gating",
    "moe_fuse",
    "amoe3d_forward",
    "gelu",
    "load_fusion_params",
    "save_fusion_params",
]

_SQRT2 = np.sqrt(2.0)


def gelu(v):
    """Exact Gaussian-error-linear unit, elementwise."""
    v = np.asarray(v, dtype=np.float64)
    return 0.5 * v * (1.0 + special.erf(v / _SQRT2))


def _perm_invariant_sum(arr, axis=0):
    """Sum along ``axis`` after sorting values, so the result depends only on
    the multiset of addends, not their order."""
    return np.sum(np.sort(arr, axis=axis), axis=axis)


@dataclass
class PointwiseAffine:
    """Per-voxel affine map ``y = x @ weights + bias`` (a 1x1x1 projection)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ShapeMismatchError(
                f"affine needs weights (Cin, Cout) and bias (Cout,), got "
                f"{self.weights.shape} and {self.bias.shape}"
            )

    @classmethod
    def identity(cls, channels: int) -> "PointwiseAffine":
        return cls(weights=np.eye(channels), bias=np.zeros(channels))


def inject_polar(
    v_po: FeatureVolume,
    table: CrossIndexTable,
    v_ca: FeatureVolume,
    align: PointwiseAffine,
) -> FeatureVolume:
    """Gather each Cartesian voxel's polar partner, project its features
    through ``align``, and prepend them to the Cartesian channels.

    Both volumes must live on exactly the grids the index table was built
    for.  The result is valid where either source is valid; gathered rows
    from invalid polar bins contribute the affine bias (their features are
    zeros by construction).
    """
    if v_po.grid != table.po_spec:
        raise LevelMismatchError("polar volume grid differs from the table's polar spec")
    if v_ca.grid != table.ca_spec:
        raise LevelMismatchError("cartesian volume grid differs from the table's spec")
    if align.weights.shape[0] != v_po.channels:
        raise ShapeMismatchError(
            f"align expects {align.weights.shape[0]} input channels, polar volume "
            f"has {v_po.channels}"
        )
    gathered = v_po.data[table.indices]
    g_valid = v_po.valid[table.indices]
    aligned = gathered @ align.weights + align.bias
    out = np.concatenate([aligned, v_ca.data], axis=1)
    return FeatureVolume(grid=v_ca.grid, data=out, valid=g_valid | v_ca.valid)


@dataclass
class SaliencyParams:
    """Parameters of the dual gating stage: a shared two-layer MLP for the
    channel gate and a ``(2, 7, 7, 7)`` stencil (average map then max map)
    for the spatial gate."""

    mlp_w1: np.ndarray
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray
    spatial_kernel: np.ndarray
    spatial_bias: float = 0.0

    def __post_init__(self):
        self.mlp_w1 = np.asarray(self.mlp_w1, dtype=np.float64)
        self.mlp_b1 = np.asarray(self.mlp_b1, dtype=np.float64).reshape(-1)
        self.mlp_w2 = np.asarray(self.mlp_w2, dtype=np.float64)
        self.mlp_b2 = np.asarray(self.mlp_b2, dtype=np.float64).reshape(-1)
        self.spatial_kernel = np.asarray(self.spatial_kernel, dtype=np.float64)
        self.spatial_bias = float(self.spatial_bias)
        c, hidden = self.mlp_w1.shape
        if self.mlp_b1.shape != (hidden,) or self.mlp_w2.shape != (hidden, c) \
                or self.mlp_b2.shape != (c,):
            raise ShapeMismatchError("channel-gate MLP shapes are inconsistent")
        if self.spatial_kernel.shape != (2, 7, 7, 7):
            raise ShapeMismatchError(
                f"spatial kernel must be (2, 7, 7, 7), got {self.spatial_kernel.shape}"
            )

    @property
    def channels(self):
        return self.mlp_w1.shape[0]

    @classmethod
    def zeros(cls, channels: int, reduction: int = 16) -> "SaliencyParams":
        """All-zero parameters; the hidden width is ``ceil(channels / reduction)``
        (at least 1).  Both gates then sit at 0.5 everywhere."""
        hidden = max(1, -(-channels // reduction))
        return cls(
            mlp_w1=np.zeros((channels, hidden)),
            mlp_b1=np.zeros(hidden),
            mlp_w2=np.zeros((hidden, channels)),
            mlp_b2=np.zeros(channels),
            spatial_kernel=np.zeros((2, 7, 7, 7)),
            spatial_bias=0.0,
        )


def _gate_mlp(vec, p: SaliencyParams):
    h = np.maximum(vec @ p.mlp_w1 + p.mlp_b1, 0.0)
    return h @ p.mlp_w2 + p.mlp_b2


def channel_gate(x: FeatureVolume, params: SaliencyParams) -> np.ndarray:
    """Per-channel gate in ``(0, 1)``: sigmoid of the shared MLP applied to
    the volume's mean- and max-pooled channel descriptors, summed."""
    if params.channels != x.channels:
        raise ShapeMismatchError(
            f"gate built for {params.channels} channels, volume has {x.channels}"
        )
    gap = x.data.mean(axis=0)
    gmp = x.data.max(axis=0)
    return special.expit(_gate_mlp(gap, params) + _gate_mlp(gmp, params))


def spatial_gate(x: FeatureVolume, params: SaliencyParams) -> np.ndarray:
    """Per-voxel gate in ``(0, 1)``: sigmoid of a 7x7x7 stencil (zero padded)
    over the stacked channel-average and channel-max maps."""
    g = x.as_grid()
    avg = g.mean(axis=3)
    mx = g.max(axis=3)
    resp = (
        ndi.correlate(avg, params.spatial_kernel[0], mode="constant", cval=0.0)
        + ndi.correlate(mx, params.spatial_kernel[1], mode="constant", cval=0.0)
        + params.spatial_bias
    )
    return special.expit(resp)


def apply_saliency(x: FeatureVolume, a_c: np.ndarray, a_s: np.ndarray) -> FeatureVolume:
    """Scale the volume by a channel gate ``(C,)`` and a voxel gate matching
    the grid shape; validity is unchanged."""
    a_c = np.asarray(a_c, dtype=np.float64)
    a_s = np.asarray(a_s, dtype=np.float64)
    if a_c.shape != (x.channels,):
        raise ShapeMismatchError(f"channel gate {a_c.shape} != ({x.channels},)")
    if a_s.size != x.data.shape[0]:
        raise ShapeMismatchError(
            f"spatial gate has {a_s.size} entries for {x.data.shape[0]} voxels"
        )
    y = (x.data * a_c[None, :]) * a_s.reshape(-1)[:, None]
    return FeatureVolume(grid=x.grid, data=y, valid=x.valid)


def grad_energy3d(x: FeatureVolume) -> np.ndarray:
    """Per-voxel gradient energy: the squared forward difference along each
    grid axis, summed over axes and channels (the trailing slice along each
    axis differences against an implicit copy of itself, i.e. contributes
    zero).  Returns the dense grid shape."""
    g = x.as_grid()
    e = np.zeros(g.shape[:3], dtype=np.float64)
    for axis in range(3):
        d = _forward_diff(g, axis)
        e += np.sum(d * d, axis=3)
    return e


def _forward_diff(g, axis):
    d = np.zeros_like(g)
    lo = [slice(None)] * 4
    hi = [slice(None)] * 4
    lo[axis] = slice(0, g.shape[axis] - 1)
    hi[axis] = slice(1, None)
    d[tuple(lo)] = g[tuple(hi)] - g[tuple(lo)]
    return d


def grad_energy_total(x: FeatureVolume) -> float:
    """Scalar total of :func:`grad_energy3d` over the volume."""
    return float(np.sum(grad_energy3d(x)))


def grad_energy_backward(x: FeatureVolume) -> np.ndarray:
    """Gradient of :func:`grad_energy_total` with respect to every feature
    entry, as ``(N, C)`` rows matching ``x.data``."""
    g = x.as_grid()
    grad = np.zeros_like(g)
    for axis in range(3):
        d = _forward_diff(g, axis)
        back = np.zeros_like(g)
        lo = [slice(None)] * 4
        hi = [slice(None)] * 4
        lo[axis] = slice(0, g.shape[axis] - 1)
        hi[axis] = slice(1, None)
        back[tuple(hi)] = d[tuple(lo)]
        grad += 2.0 * (back - d)
    return grad.reshape(x.data.shape)


@dataclass
class MoeParams:
    """K per-voxel experts (affine, GELU, affine — all 1x1x1) plus the
    stencil that routes gradient energy to a softmax over experts."""

    expert_w1: np.ndarray
    expert_b1: np.ndarray
    expert_w2: np.ndarray
    expert_b2: np.ndarray
    gating_kernel: np.ndarray
    gating_bias: np.ndarray

    def __post_init__(self):
        self.expert_w1 = np.asarray(self.expert_w1, dtype=np.float64)
        self.expert_b1 = np.asarray(self.expert_b1, dtype=np.float64)
        self.expert_w2 = np.asarray(self.expert_w2, dtype=np.float64)
        self.expert_b2 = np.asarray(self.expert_b2, dtype=np.float64)
        self.gating_kernel = np.asarray(self.gating_kernel, dtype=np.float64)
        self.gating_bias = np.asarray(self.gating_bias, dtype=np.float64).reshape(-1)
        if self.expert_w1.ndim != 3 or self.expert_w1.shape[1] != self.expert_w1.shape[2]:
            raise ShapeMismatchError(
                f"expert weights must be (K, C, C), got {self.expert_w1.shape}"
            )
        k, c, _ = self.expert_w1.shape
        if (
            self.expert_b1.shape != (k, c)
            or self.expert_w2.shape != (k, c, c)
            or self.expert_b2.shape != (k, c)
            or self.gating_bias.shape != (k,)
        ):
            raise ShapeMismatchError("expert parameter stacks are inconsistent")
        if (
            self.gating_kernel.ndim != 4
            or self.gating_kernel.shape[0] != k
            or self.gating_kernel.shape[1] % 2 == 0
            or len({self.gating_kernel.shape[1], self.gating_kernel.shape[2],
                    self.gating_kernel.shape[3]}) != 1
        ):
            raise ShapeMismatchError(
                f"gating kernel must be (K, g, g, g) with odd g, got "
                f"{self.gating_kernel.shape}"
            )

    @property
    def n_experts(self):
        return self.expert_w1.shape[0]

    @property
    def channels(self):
        return self.expert_w1.shape[1]

    @classmethod
    def zeros(cls, channels: int, n_experts: int = 4, kernel_size: int = 3) -> "MoeParams":
        """All-zero parameters: gating is uniform ``1/K`` and every expert
        outputs zero, so the fusion is the identity."""
        k = n_experts
        return cls(
            expert_w1=np.zeros((k, channels, channels)),
            expert_b1=np.zeros((k, channels)),
            expert_w2=np.zeros((k, channels, channels)),
            expert_b2=np.zeros((k, channels)),
            gating_kernel=np.zeros((k, kernel_size, kernel_size, kernel_size)),
            gating_bias=np.zeros(k),
        )


def _gating_from_energy(energy: np.ndarray, params: MoeParams) -> np.ndarray:
    k = params.n_experts
    logits = np.stack(
        [
            ndi.correlate(energy, params.gating_kernel[i], mode="constant", cval=0.0)
            + params.gating_bias[i]
            for i in range(k)
        ]
    )
    m = logits.max(axis=0)
    e = np.exp(logits - m)
    denom = _perm_invariant_sum(e, axis=0)
    return e / denom


def moe_gating(x: FeatureVolume, params: MoeParams) -> np.ndarray:
    """Per-voxel expert weights, shape ``(K,) + grid shape`` — strictly
    positive and summing to one at every voxel."""
    if params.channels != x.channels:
        raise ShapeMismatchError(
            f"experts built for {params.channels} channels, volume has {x.channels}"
        )
    return _gating_from_energy(grad_energy3d(x), params)


def moe_fuse(x: FeatureVolume, params: MoeParams) -> FeatureVolume:
    """Residual expert mixture: ``x + sum_k alpha_k * expert_k(x)`` with
    ``alpha`` routed from the volume's gradient energy.

    The sum over experts (and the softmax normalizer) is evaluated in
    value-sorted order, so relabeling the experts cannot change a single
    output bit.
    """
    if params.channels != x.channels:
        raise ShapeMismatchError(
            f"experts built for {params.channels} channels, volume has {x.channels}"
        )
    alpha = _gating_from_energy(grad_energy3d(x), params)
    k = params.n_experts
    n, c = x.data.shape
    alpha_flat = alpha.reshape(k, n)
    contribs = np.empty((k, n, c), dtype=np.float64)
    for i in range(k):
        h = gelu(x.data @ params.expert_w1[i] + params.expert_b1[i])
        expert = h @ params.expert_w2[i] + params.expert_b2[i]
        contribs[i] = alpha_flat[i][:, None] * expert
    out = x.data + _perm_invariant_sum(contribs, axis=0)
    return FeatureVolume(grid=x.grid, data=out, valid=x.valid)


def amoe3d_forward(
    x: FeatureVolume, saliency: SaliencyParams, moe: MoeParams
) -> FeatureVolume:
    """Full refinement: channel gate, spatial gate, then the expert mixture."""
    a_c = channel_gate(x, saliency)
    a_s = spatial_gate(x, saliency)
    y = apply_saliency(x, a_c, a_s)
    return moe_fuse(y, moe)


# -- parameter files -------------------------------------------------------

_ALIGN_KEYS = ("weights", "bias")
_SALIENCY_KEYS = ("mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2", "spatial_kernel")
_MOE_KEYS = (
    "expert_w1", "expert_b1", "expert_w2", "expert_b2", "gating_kernel", "gating_bias",
)


def save_fusion_params(
    directory,
    align: PointwiseAffine,
    saliency: SaliencyParams,
    moe: MoeParams,
) -> None:
    """Write the three parameter groups as float32 tensor files plus a
    ``params.json`` manifest naming them."""
    os.makedirs(directory, exist_ok=True)
    listing = {"align": {}, "saliency": {}, "moe": {}}
    groups = (
        ("align", align, _ALIGN_KEYS),
        ("saliency", saliency, _SALIENCY_KEYS),
        ("moe", moe, _MOE_KEYS),
    )
    for group, obj, keys in groups:
        for key in keys:
            fname = f"{group}_{key}.ptns"
            write_ptns(os.path.join(directory, fname),
                       np.asarray(getattr(obj, key), dtype=np.float32))
            listing[group][key] = fname
    listing["saliency"]["spatial_bias"] = saliency.spatial_bias
    with open(os.path.join(directory, "params.json"), "w", encoding="utf-8") as fh:
        json.dump(listing, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_fusion_params(directory):
    """Inverse of :func:`save_fusion_params`; returns ``(align, saliency, moe)``."""
    manifest_path = os.path.join(directory, "params.json")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            listing = json.load(fh)
    except json.JSONDecodeError as e:
        raise FormatError(f"{manifest_path}: invalid JSON ({e})") from e

    def tensors(group, keys):
        out = {}
        entries = listing.get(group)
        if not isinstance(entries, dict):
            raise FormatError(f"{manifest_path}: missing parameter group {group!r}")
        for key in keys:
            if key not in entries:
                raise FormatError(f"{manifest_path}: {group} is missing {key!r}")
            out[key] = read_ptns(os.path.join(directory, entries[key])).astype(np.float64)
        return out

    align = PointwiseAffine(**tensors("align", _ALIGN_KEYS))
    sal_kw = tensors("saliency", _SALIENCY_KEYS)
    sal_kw["spatial_bias"] = float(listing["saliency"].get("spatial_bias", 0.0))
    saliency = SaliencyParams(**sal_kw)
    moe = MoeParams(**tensors("moe", _MOE_KEYS))
    return align, saliency, moe
