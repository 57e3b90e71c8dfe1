"""Dataset construction and ingestion.

Synthetic generators (circle, sphere, standard normal) plus the big-endian
IDX binary image/label format. Pixels are scaled to [0, 1] by dividing by
255; the scaling and a content digest go into every dataset manifest so runs
stay comparable.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .limit_kernel import EmpiricalMeasure
from .numerics import RngStream

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

PIXEL_SCALE = 1.0 / 255.0


class IdxFormatError(ValueError):
    """Malformed IDX payload (magic, dimensions, or length)."""


class IdxConsistencyError(ValueError):
    """Image and label files disagree about the record count."""


@dataclass(frozen=True)
class LabeledDataset:
    measure: EmpiricalMeasure
    targets: Optional[np.ndarray]  # (N, n_out) or None
    provenance: dict

    def __post_init__(self):
        if self.targets is not None and self.targets.shape[0] != self.measure.count:
            raise ValueError("target row count does not match the dataset")

    def manifest(self) -> dict:
        return {
            "provenance": dict(self.provenance),
            "N": self.measure.count,
            "n0": self.measure.input_dim,
            "digest": self.measure.digest,
            "scaling": self.provenance.get("scaling"),
        }


def circle_dataset(count: int, angle_offset: float = 0.0) -> LabeledDataset:
    """`count` points evenly spaced on the unit circle."""
    if count < 1:
        raise ValueError("count must be positive")
    angles = angle_offset + 2.0 * np.pi * np.arange(count) / count
    pts = np.column_stack([np.cos(angles), np.sin(angles)])
    return LabeledDataset(
        measure=EmpiricalMeasure(pts),
        targets=None,
        provenance={"kind": "circle", "count": count, "angle_offset": float(angle_offset)},
    )


def sphere_dataset(count: int, n0: int, rng: RngStream) -> LabeledDataset:
    """iid uniform points on the unit sphere; rows are guaranteed pairwise
    distinct (duplicates and zero draws are redrawn)."""
    if count < 1:
        raise ValueError("count must be positive")
    if n0 < 2:
        raise ValueError("the sphere needs ambient dimension at least 2")
    gen = rng.generator()
    pts = np.empty((count, n0))
    for attempt in range(100):
        raw = gen.standard_normal((count, n0))
        norms = np.linalg.norm(raw, axis=1)
        if np.any(norms == 0.0):
            continue
        pts = raw / norms[:, None]
        if np.unique(pts, axis=0).shape[0] == count:
            break
    else:
        raise RuntimeError("could not draw pairwise distinct sphere points")
    return LabeledDataset(
        measure=EmpiricalMeasure(pts),
        targets=None,
        provenance={"kind": "sphere", "count": count, "n0": n0,
                    "seed": rng.seed, "stream": rng.stream},
    )


def gaussian_dataset(count: int, n0: int, rng: RngStream) -> LabeledDataset:
    """iid standard-normal rows; count 0 gives an empty dataset."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    pts = rng.generator().standard_normal((count, n0))
    return LabeledDataset(
        measure=EmpiricalMeasure(pts),
        targets=None,
        provenance={"kind": "gaussian", "count": count, "n0": n0,
                    "seed": rng.seed, "stream": rng.stream},
    )


def _read_be_u32(fh, what: str) -> int:
    raw = fh.read(4)
    if len(raw) != 4:
        raise IdxFormatError(f"truncated header while reading {what}")
    return struct.unpack(">I", raw)[0]


def _read_idx_images(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = _read_be_u32(fh, "image magic")
        if magic != IMAGE_MAGIC:
            raise IdxFormatError(
                f"bad image magic: expected {IMAGE_MAGIC:#010x}, found {magic:#010x}"
            )
        count = _read_be_u32(fh, "image count")
        rows = _read_be_u32(fh, "row count")
        cols = _read_be_u32(fh, "column count")
        payload = fh.read()
    want = count * rows * cols
    if len(payload) != want:
        raise IdxFormatError(
            f"image payload holds {len(payload)} bytes, expected {want}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows * cols)


def _read_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = _read_be_u32(fh, "label magic")
        if magic != LABEL_MAGIC:
            raise IdxFormatError(
                f"bad label magic: expected {LABEL_MAGIC:#010x}, found {magic:#010x}"
            )
        count = _read_be_u32(fh, "label count")
        payload = fh.read()
    if len(payload) != count:
        raise IdxFormatError(f"label payload holds {len(payload)} bytes, expected {count}")
    return np.frombuffer(payload, dtype=np.uint8)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_idx(images_path, labels_path=None, limit: Optional[int] = None,
             label_mode: str = "scalar") -> LabeledDataset:
    """Load an IDX image file (pixels scaled to [0, 1]) and optional labels.

    label_mode: "scalar" keeps one column of digit values; "onehot" expands
    to ten indicator columns.
    """
    if label_mode not in ("scalar", "onehot"):
        raise ValueError(f"unknown label_mode {label_mode!r}")
    pixels = _read_idx_images(images_path)
    labels = None
    if labels_path is not None:
        labels = _read_idx_labels(labels_path)
        if labels.shape[0] != pixels.shape[0]:
            raise IdxConsistencyError(
                f"{pixels.shape[0]} images but {labels.shape[0]} labels"
            )
    if limit is not None:
        pixels = pixels[:limit]
        labels = None if labels is None else labels[:limit]
    points = pixels.astype(np.float64) * PIXEL_SCALE
    targets = None
    if labels is not None:
        if label_mode == "scalar":
            targets = labels.astype(np.float64)[:, None]
        else:
            targets = np.eye(10)[labels]
    provenance = {
        "kind": "idx_file",
        "images_path": str(images_path),
        "images_digest": file_digest(images_path),
        "limit": limit,
        "scaling": "pixels / 255",
        "label_mode": label_mode if labels is not None else None,
    }
    if labels_path is not None:
        provenance["labels_path"] = str(labels_path)
        provenance["labels_digest"] = file_digest(labels_path)
    return LabeledDataset(measure=EmpiricalMeasure(points), targets=targets,
                          provenance=provenance)


def write_idx_images(path, images: np.ndarray):
    """Write a (count, rows, cols) uint8 array in IDX image format."""
    a = np.asarray(images, dtype=np.uint8)
    if a.ndim != 3:
        raise ValueError("images must be (count, rows, cols)")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, *a.shape))
        fh.write(a.tobytes())


def write_idx_labels(path, labels: np.ndarray):
    a = np.asarray(labels, dtype=np.uint8)
    if a.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, a.shape[0]))
        fh.write(a.tobytes())
