"""Dataset manifests: JSON files naming grids, calibration, classes, frames.

A manifest is the CLI's unit of dataset description.  Paths inside it are
stored as written (usually relative); they resolve against the manifest's
own directory, which travels on the loaded object but never serializes, so
``load -> save -> load`` is the identity.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .bigrid import CartesianGridSpec, PolarGridSpec
from .errors import FormatError

__all__ = ["ClassEntry", "FrameEntry", "Manifest", "load_manifest", "save_manifest"]


@dataclass(frozen=True)
class ClassEntry:
    id: int
    name: str
    frequency: float


@dataclass(frozen=True)
class FrameEntry:
    """Per-frame file paths: raw panorama, optional feature planes keyed by
    scale, ground-truth grid, optional validity mask."""

    panorama: str
    gt: str
    features: tuple = ()
    valid_mask: str | None = None


@dataclass
class Manifest:
    dataset: str
    split: str
    cartesian: CartesianGridSpec
    polar: PolarGridSpec
    calibration: str
    classes: list
    frames: list
    base_dir: str = field(default="", compare=False, repr=False)

    def resolve(self, path: str) -> str:
        """Absolute location of a path stored in this manifest."""
        if os.path.isabs(path):
            return path
        return os.path.join(self.base_dir, path)

    def class_frequencies(self) -> np.ndarray:
        return np.array([c.frequency for c in self.classes], dtype=np.float64)


def _grid_from(d: dict, keys, cls, label: str):
    missing = [k for k in keys if k not in d]
    if missing:
        raise FormatError(f"{label} grid is missing fields: {', '.join(missing)}")
    return cls(**{k: d[k] for k in keys})


_CA_KEYS = ("nx", "ny", "nz", "x0", "y0", "z0", "dx", "dy", "dz")
_PO_KEYS = ("nr", "nphi", "nz", "r0", "r1", "z0", "dz")


def load_manifest(path, check_paths: bool = True) -> Manifest:
    """Parse and validate a manifest file.

    With ``check_paths`` every referenced file must exist relative to the
    manifest; class ids must be dense from 0.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: invalid JSON ({e})") from e
    for key in ("dataset", "split", "cartesian_grid", "polar_grid", "calibration",
                "classes", "frames"):
        if key not in d:
            raise FormatError(f"{path}: missing field {key!r}")
    base = os.path.dirname(os.path.abspath(path))
    classes = []
    for entry in d["classes"]:
        try:
            classes.append(
                ClassEntry(
                    id=int(entry["id"]),
                    name=str(entry["name"]),
                    frequency=float(entry["frequency"]),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"{path}: malformed class entry {entry!r}") from e
    ids = sorted(c.id for c in classes)
    if ids != list(range(len(ids))):
        raise FormatError(f"{path}: class ids must be dense from 0, got {ids}")
    frames = []
    for entry in d["frames"]:
        try:
            features = tuple(
                (int(scale), str(p)) for scale, p in entry.get("features", [])
            )
            frames.append(
                FrameEntry(
                    panorama=str(entry["panorama"]),
                    gt=str(entry["gt"]),
                    features=features,
                    valid_mask=entry.get("valid_mask"),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"{path}: malformed frame entry {entry!r}") from e
    m = Manifest(
        dataset=str(d["dataset"]),
        split=str(d["split"]),
        cartesian=_grid_from(d["cartesian_grid"], _CA_KEYS, CartesianGridSpec, "cartesian"),
        polar=_grid_from(d["polar_grid"], _PO_KEYS, PolarGridSpec, "polar"),
        calibration=str(d["calibration"]),
        classes=classes,
        frames=frames,
        base_dir=base,
    )
    if check_paths:
        referenced = [m.calibration]
        for f in m.frames:
            referenced.append(f.panorama)
            referenced.append(f.gt)
            referenced.extend(p for _, p in f.features)
            if f.valid_mask:
                referenced.append(f.valid_mask)
        for p in referenced:
            full = m.resolve(p)
            if not os.path.exists(full):
                raise FormatError(f"{path}: referenced file does not exist: {full}")
    return m


def manifest_to_dict(m: Manifest) -> dict:
    return {
        "dataset": m.dataset,
        "split": m.split,
        "cartesian_grid": {k: getattr(m.cartesian, k) for k in _CA_KEYS},
        "polar_grid": {k: getattr(m.polar, k) for k in _PO_KEYS},
        "calibration": m.calibration,
        "classes": [
            {"id": c.id, "name": c.name, "frequency": c.frequency} for c in m.classes
        ],
        "frames": [
            {
                "panorama": f.panorama,
                "gt": f.gt,
                **({"features": [[s, p] for s, p in f.features]} if f.features else {}),
                **({"valid_mask": f.valid_mask} if f.valid_mask else {}),
            }
            for f in m.frames
        ],
    }


def save_manifest(m: Manifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest_to_dict(m), fh, indent=2, sort_keys=True)
        fh.write("\n")
