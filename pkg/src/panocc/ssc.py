"""Semantic scene completion losses, labeling, and evaluation metrics.

Voxels enter a loss only when they are valid (visible) and their ground
truth is not the IGNORE sentinel.  All reductions run through a pairwise
summation tree so results are reproducible bit-for-bit regardless of how
work is sliced.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bigrid import _bin_lower
from .camera import PI, TWO_PI, wrap_angle
from .errors import DimMismatchError, NoSupervisedVoxelsError, ShapeMismatchError

__all__ = [
    "IGNORE",
    "LogitVolume",
    "OccupancyGrid",
    "SscReport",
    "LossConfig",
    "LossBreakdown",
    "pairwise_sum",
    "softmax_probs",
    "argmax_labels",
    "ce_loss",
    "scal_loss",
    "fp_loss",
    "total_loss",
    "ssc_metrics",
    "ce_weights_from_frequencies",
]

IGNORE = 255


@dataclass
class LogitVolume:
    """Dense per-voxel class logits ``(X, Y, Z, C)`` with a visibility mask."""

    data: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.data.ndim != 4:
            raise DimMismatchError(f"logits must be (X, Y, Z, C), got {self.data.shape}")
        if self.data.shape[3] < 2:
            raise DimMismatchError("need at least 2 classes (class 0 is empty space)")
        if self.valid.shape != self.data.shape[:3]:
            raise DimMismatchError(
                f"validity {self.valid.shape} does not match grid {self.data.shape[:3]}"
            )

    @property
    def num_classes(self):
        return self.data.shape[3]


@dataclass
class OccupancyGrid:
    """Per-voxel class ids ``(X, Y, Z)``; 0 is empty space, 255 is IGNORE."""

    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 3:
            raise DimMismatchError(f"labels must be (X, Y, Z), got {self.labels.shape}")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise DimMismatchError(f"labels must be integral, got {self.labels.dtype}")
        self.labels = self.labels.astype(np.int64)
        if self.labels.size and self.labels.min() < 0:
            raise DimMismatchError("labels must be non-negative")


def pairwise_sum(values) -> float:
    """Sum a sequence by repeatedly adding adjacent pairs.

    The reduction tree depends only on the element order, never on chunking,
    so every caller gets the same bits for the same data.
    """
    a = np.asarray(values, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    while a.size > 1:
        even = (a.size // 2) * 2
        s = a[0:even:2] + a[1:even:2]
        if a.size % 2:
            s = np.concatenate([s, a[-1:]])
        a = s
    return float(a[0])


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the trailing axis."""
    z = np.asarray(logits, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.sum(np.exp(s), axis=-1, keepdims=True))


def argmax_labels(z: LogitVolume) -> OccupancyGrid:
    """Most likely class per voxel (ties go to the lowest index); voxels the
    volume marks invalid come back as IGNORE."""
    labels = np.argmax(z.data, axis=3).astype(np.int64)
    labels[~z.valid] = IGNORE
    return OccupancyGrid(labels=labels)


def _supervision_mask(z: LogitVolume, gt: OccupancyGrid) -> np.ndarray:
    if gt.labels.shape != z.data.shape[:3]:
        raise DimMismatchError(
            f"ground truth {gt.labels.shape} does not match logits {z.data.shape[:3]}"
        )
    return z.valid & (gt.labels != IGNORE)


def ce_loss(z: LogitVolume, gt: OccupancyGrid, class_weights=None) -> float:
    """Weighted mean cross-entropy over supervised voxels.

    ``class_weights`` is an optional ``(C,)`` vector; omitted means unit
    weights.  Raises :class:`NoSupervisedVoxelsError` when no voxel is both
    valid and labeled.
    """
    mask = _supervision_mask(z, gt)
    if not np.any(mask):
        raise NoSupervisedVoxelsError("no voxel is valid with a non-IGNORE label")
    labels = gt.labels[mask]
    logp = _log_softmax(z.data[mask])
    nll = -np.take_along_axis(logp, labels[:, None], axis=1)[:, 0]
    if class_weights is None:
        w = np.ones_like(nll)
    else:
        w = np.asarray(class_weights, dtype=np.float64)
        if w.shape != (z.num_classes,):
            raise ShapeMismatchError(
                f"class weights {w.shape} != ({z.num_classes},)"
            )
        w = w[labels]
    return pairwise_sum(w * nll) / pairwise_sum(w)


def _affinity_terms(p: np.ndarray, pos: np.ndarray):
    """Soft precision / recall / specificity log-terms for one class.

    ``p`` holds the class's predicted probability per supervised voxel and
    ``pos`` flags where the ground truth is that class.  Terms whose
    denominator is empty (or zero) are dropped rather than forced to
    ``-log 0``.
    """
    n_pos = int(np.count_nonzero(pos))
    terms = 0.0
    hit = pairwise_sum(p[pos])
    total = pairwise_sum(p)
    if total > 0.0:
        terms += np.log(hit / total)
    terms += np.log(hit / n_pos)
    neg = ~pos
    n_neg = int(np.count_nonzero(neg))
    if n_neg > 0:
        terms += np.log(pairwise_sum(1.0 - p[neg]) / n_neg)
    return terms


def scal_loss(z: LogitVolume, gt: OccupancyGrid, mode: str = "sem") -> float:
    """Scene-affinity loss: negative mean, over classes present in the
    ground truth, of soft log-precision + log-recall + log-specificity.

    ``mode="sem"`` scores each semantic class's probability channel;
    ``mode="geo"`` scores the two-way empty/occupied split (occupied
    probability is the sum over semantic channels).
    """
    if mode not in ("sem", "geo"):
        raise ValueError(f"mode must be 'sem' or 'geo', got {mode!r}")
    mask = _supervision_mask(z, gt)
    if not np.any(mask):
        raise NoSupervisedVoxelsError("no voxel is valid with a non-IGNORE label")
    probs = softmax_probs(z.data[mask])
    labels = gt.labels[mask]
    if mode == "sem":
        cases = [(probs[:, c], labels == c) for c in range(1, z.num_classes)]
    else:
        occupied = np.sum(probs[:, 1:], axis=1)
        cases = [(probs[:, 0], labels == 0), (occupied, labels > 0)]
    acc = []
    for p, pos in cases:
        if np.any(pos):
            acc.append(_affinity_terms(p, pos))
    if not acc:
        raise NoSupervisedVoxelsError("no scored class is present in the ground truth")
    return -(pairwise_sum(acc) / len(acc))


def fp_loss(z: LogitVolume, gt: OccupancyGrid, sectors: int = 8) -> float:
    """Azimuthal proportion-matching loss.

    The grid is cut into ``sectors`` equal azimuth wedges about its center
    (in index space).  Per wedge, the ground-truth class proportions ``q``
    and the mean predicted probabilities ``p`` over supervised voxels give
    ``KL(q || p)``, skipping classes absent from ``q``; the loss is the mean
    over wedges that contain supervised voxels.
    """
    if sectors < 1:
        raise ValueError(f"sectors must be >= 1, got {sectors}")
    mask = _supervision_mask(z, gt)
    if not np.any(mask):
        raise NoSupervisedVoxelsError("no voxel is valid with a non-IGNORE label")
    nx, ny, _ = gt.labels.shape
    ox = np.arange(nx, dtype=np.float64) + 0.5 - nx / 2.0
    oy = np.arange(ny, dtype=np.float64) + 0.5 - ny / 2.0
    az = wrap_angle(np.arctan2(oy[None, :], ox[:, None]))
    sector = _bin_lower(az + PI, TWO_PI / sectors, sectors)
    sector3 = np.broadcast_to(sector[:, :, None], gt.labels.shape)
    probs = softmax_probs(z.data)
    c = z.num_classes
    per_sector = []
    for s in range(sectors):
        smask = mask & (sector3 == s)
        n = int(np.count_nonzero(smask))
        if n == 0:
            continue
        labels = gt.labels[smask]
        kl = 0.0
        for cls in range(c):
            n_cls = int(np.count_nonzero(labels == cls))
            if n_cls == 0:
                continue
            q = n_cls / n
            p = pairwise_sum(probs[:, :, :, cls][smask]) / n
            kl += q * (np.log(q) - np.log(p))
        per_sector.append(kl)
    return pairwise_sum(per_sector) / len(per_sector)


@dataclass
class LossConfig:
    """Knobs for :func:`total_loss`: optional per-class CE weights and the
    azimuthal sector count of the proportion loss."""

    class_weights: np.ndarray | None = None
    fp_sectors: int = 8


@dataclass
class LossBreakdown:
    ce: float
    scal_sem: float
    scal_geo: float
    fp: float
    total: float = field(init=False)

    def __post_init__(self):
        self.total = self.ce + self.scal_sem + self.scal_geo + self.fp


def total_loss(z: LogitVolume, gt: OccupancyGrid, config: LossConfig | None = None) -> LossBreakdown:
    """Sum of the four training terms with unit coefficients."""
    cfg = config or LossConfig()
    return LossBreakdown(
        ce=ce_loss(z, gt, cfg.class_weights),
        scal_sem=scal_loss(z, gt, "sem"),
        scal_geo=scal_loss(z, gt, "geo"),
        fp=fp_loss(z, gt, cfg.fp_sectors),
    )


def ce_weights_from_frequencies(frequencies) -> np.ndarray:
    """Inverse-log class weights ``1 / ln(1.02 + f)`` from per-class
    frequencies (fractions of labeled voxels)."""
    f = np.asarray(frequencies, dtype=np.float64)
    return 1.0 / np.log(1.02 + f)


@dataclass
class SscReport:
    """Evaluation summary: per-semantic-class IoU plus scene-level
    occupancy precision/recall/IoU."""

    per_class_iou: np.ndarray
    miou: float
    precision: float
    recall: float
    geom_iou: float

    def to_dict(self) -> dict:
        return {
            "miou": self.miou,
            "iou_geo": self.geom_iou,
            "precision": self.precision,
            "recall": self.recall,
            "per_class": [float(v) for v in self.per_class_iou],
        }

    def to_text(self, class_names=None) -> str:
        lines = ["class             iou", "-" * 26]
        for i, v in enumerate(self.per_class_iou):
            name = None
            if class_names is not None and i + 1 < len(class_names):
                name = class_names[i + 1]
            name = name or f"class_{i + 1}"
            lines.append(f"{name:<16s} {v:6.4f}")
        lines += [
            "-" * 26,
            f"miou             {self.miou:6.4f}",
            f"precision        {self.precision:6.4f}",
            f"recall           {self.recall:6.4f}",
            f"iou_geo          {self.geom_iou:6.4f}",
        ]
        return "\n".join(lines) + "\n"


def ssc_metrics(pred: OccupancyGrid, gt: OccupancyGrid, num_classes=None) -> SscReport:
    """Score a predicted label grid against ground truth.

    Voxels where either grid holds IGNORE are excluded everywhere, which
    keeps the report symmetric: swapping the arguments exchanges precision
    and recall and leaves every IoU unchanged.  ``num_classes`` fixes the
    class-axis length; omitted, it is inferred from the largest label seen.
    """
    if pred.labels.shape != gt.labels.shape:
        raise DimMismatchError(
            f"prediction {pred.labels.shape} does not match GT {gt.labels.shape}"
        )
    mask = (pred.labels != IGNORE) & (gt.labels != IGNORE)
    p = pred.labels[mask]
    g = gt.labels[mask]
    if num_classes is None:
        c = int(max(p.max(initial=1), g.max(initial=1))) + 1
    else:
        c = int(num_classes)
    conf = np.bincount(g * c + p, minlength=c * c).reshape(c, c)
    occ_p = p > 0
    occ_g = g > 0
    tp = int(np.count_nonzero(occ_p & occ_g))
    fp = int(np.count_nonzero(occ_p & ~occ_g))
    fn = int(np.count_nonzero(~occ_p & occ_g))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    geom_iou = tp / (tp + fp + fn) if tp + fp + fn else 0.0
    iou = np.zeros(c - 1, dtype=np.float64)
    present = np.zeros(c - 1, dtype=bool)
    for cls in range(1, c):
        ctp = conf[cls, cls]
        cfp = conf[:, cls].sum() - ctp
        cfn = conf[cls, :].sum() - ctp
        denom = ctp + cfp + cfn
        iou[cls - 1] = ctp / denom if denom else 0.0
        present[cls - 1] = conf[cls, :].sum() > 0
    miou = float(iou[present].mean()) if np.any(present) else 0.0
    return SscReport(
        per_class_iou=iou,
        miou=miou,
        precision=precision,
        recall=recall,
        geom_iou=geom_iou,
    )
