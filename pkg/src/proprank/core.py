"""Bounding-box geometry, IoU labeling, and the JSON Lines dataset model.

Boxes are axis-aligned real rectangles in pixel coordinates with the
(x_max, y_max) corner exclusive, so the continuous area of an integer box
equals the size of its half-open pixel set.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np


class DataError(ValueError):
    """Raised when a record, file, or dataset violates an input contract."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle; must have strictly positive width and height."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        coords = tuple(float(v) for v in (self.x_min, self.y_min, self.x_max, self.y_max))
        if not all(math.isfinite(v) for v in coords):
            raise DataError(f"box has non-finite coordinates: {coords}")
        if coords[2] <= coords[0] or coords[3] <= coords[1]:
            raise DataError(f"box has non-positive extent: {coords}")
        for name, value in zip(("x_min", "y_min", "x_max", "y_max"), coords):
            object.__setattr__(self, name, value)

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; 0.0 when they do not overlap."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    if iw <= 0.0:
        return 0.0
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class GroundTruthObject:
    class_label: str
    box: Box

    def __post_init__(self) -> None:
        if not self.class_label:
            raise DataError("groundtruth object has an empty class label")


@dataclass(frozen=True, eq=False)
class Candidate:
    """One proposal box, optionally carrying its overlap label and features.

    source_index, when present, records the position the candidate held in
    the dataset it was re-ranked from.
    """

    box: Box
    iou_label: float | None = None
    features: np.ndarray | None = None
    source_index: int | None = None

    def __post_init__(self) -> None:
        if self.iou_label is not None:
            label = float(self.iou_label)
            if not math.isfinite(label) or not 0.0 <= label <= 1.0:
                raise DataError(f"iou_label must lie in [0, 1], got {self.iou_label!r}")
            object.__setattr__(self, "iou_label", label)
        if self.features is not None:
            feats = np.asarray(self.features, dtype=np.float64)
            if feats.ndim != 1:
                raise DataError(f"features must be a flat vector, got shape {feats.shape}")
            if not np.all(np.isfinite(feats)):
                raise DataError("features contain non-finite values")
            object.__setattr__(self, "features", feats)
        if self.source_index is not None and self.source_index < 0:
            raise DataError(f"source_index must be non-negative, got {self.source_index}")


@dataclass(frozen=True, eq=False)
class ImageRecord:
    """All groundtruth objects and candidate boxes of a single image.

    Every box must lie inside [0, width] x [0, height]; out-of-bounds boxes
    are rejected here rather than clamped.
    """

    image_id: str
    width: int
    height: int
    groundtruth: tuple[GroundTruthObject, ...] = ()
    candidates: tuple[Candidate, ...] = ()

    def __post_init__(self) -> None:
        if not self.image_id:
            raise DataError("record has an empty image_id")
        if self.width <= 0 or self.height <= 0:
            raise DataError(f"{self.image_id}: image size must be positive")
        object.__setattr__(self, "groundtruth", tuple(self.groundtruth))
        object.__setattr__(self, "candidates", tuple(self.candidates))
        for box in self._all_boxes():
            if box.x_min < 0 or box.y_min < 0 or box.x_max > self.width or box.y_max > self.height:
                raise DataError(
                    f"{self.image_id}: box {box.as_list()} lies outside the "
                    f"{self.width}x{self.height} image"
                )

    def _all_boxes(self) -> Iterable[Box]:
        for obj in self.groundtruth:
            yield obj.box
        for cand in self.candidates:
            yield cand.box

    @property
    def num_candidates(self) -> int:
        return len(self.candidates)

    def iou_labels(self) -> list[float]:
        """Labels of all candidates; fails if any candidate is unlabeled."""
        labels = []
        for i, cand in enumerate(self.candidates):
            if cand.iou_label is None:
                raise DataError(f"{self.image_id}: candidate {i} has no iou_label")
            labels.append(cand.iou_label)
        return labels

    def features_matrix(self) -> np.ndarray:
        """Candidate features stacked as an (n, d) array; fails if any are missing."""
        rows = []
        for i, cand in enumerate(self.candidates):
            if cand.features is None:
                raise DataError(f"{self.image_id}: candidate {i} has no features")
            rows.append(cand.features)
        if not rows:
            return np.zeros((0, 0), dtype=np.float64)
        return np.stack(rows)


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ordered collection of image records with unique image ids."""

    records: tuple[ImageRecord, ...] = ()
    feature_dim: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        seen: set[str] = set()
        for rec in self.records:
            if rec.image_id in seen:
                raise DataError(f"duplicate image_id: {rec.image_id}")
            seen.add(rec.image_id)
        dim = self.feature_dim
        for rec in self.records:
            for i, cand in enumerate(rec.candidates):
                if cand.features is None:
                    continue
                if dim is None:
                    dim = int(cand.features.shape[0])
                elif cand.features.shape[0] != dim:
                    raise DataError(
                        f"{rec.image_id}: candidate {i} has feature dimension "
                        f"{cand.features.shape[0]}, expected {dim}"
                    )
        if dim is not None and dim <= 0:
            raise DataError("feature_dim must be positive")
        object.__setattr__(self, "feature_dim", dim)

    def __len__(self) -> int:
        return len(self.records)

    def get(self, image_id: str) -> ImageRecord:
        for rec in self.records:
            if rec.image_id == image_id:
                return rec
        raise KeyError(image_id)


def label_candidates(record: ImageRecord) -> ImageRecord:
    """Return a copy whose candidates carry their best IoU against the groundtruth.

    With several groundtruth objects the label is the maximum overlap over all
    of them; with none it is 0.0. Candidate order is preserved and existing
    labels are recomputed.
    """
    labeled = tuple(
        replace(cand, iou_label=max((iou(cand.box, obj.box) for obj in record.groundtruth), default=0.0))
        for cand in record.candidates
    )
    return replace(record, candidates=labeled)


def label_dataset(dataset: Dataset) -> Dataset:
    """label_candidates applied to every record."""
    return Dataset(tuple(label_candidates(rec) for rec in dataset.records), dataset.feature_dim)


def rank_by_label(record: ImageRecord) -> list[int]:
    """Candidate indices ordered by iou_label descending; ties keep input order."""
    labels = record.iou_labels()
    return sorted(range(len(labels)), key=lambda i: -labels[i])


# ---------------------------------------------------------------------------
# JSON Lines serialization
#
# One record per line. Readers ignore unknown fields; writers emit floats via
# repr so every value round-trips exactly.


def record_to_dict(record: ImageRecord) -> dict:
    obj: dict = {
        "image_id": record.image_id,
        "width": record.width,
        "height": record.height,
        "groundtruth": [
            {"class": g.class_label, "box": g.box.as_list()} for g in record.groundtruth
        ],
    }
    cands = []
    for cand in record.candidates:
        entry: dict = {"box": cand.box.as_list()}
        if cand.iou_label is not None:
            entry["iou_label"] = cand.iou_label
        if cand.features is not None:
            entry["features"] = [float(v) for v in cand.features]
        if cand.source_index is not None:
            entry["source_index"] = cand.source_index
        cands.append(entry)
    obj["candidates"] = cands
    return obj


def _as_int(value, what: str) -> int:
    if isinstance(value, bool):
        raise DataError(f"{what} must be an integer, got {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    raise DataError(f"{what} must be an integer, got {value!r}")


def _box_from_list(value, what: str) -> Box:
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise DataError(f"{what} must be a 4-element [x_min, y_min, x_max, y_max] list")
    try:
        coords = [float(v) for v in value]
    except (TypeError, ValueError) as exc:
        raise DataError(f"{what} has a non-numeric coordinate") from exc
    return Box(*coords)


def record_from_dict(obj: dict) -> ImageRecord:
    if not isinstance(obj, dict):
        raise DataError("record is not a JSON object")
    for key in ("image_id", "width", "height"):
        if key not in obj:
            raise DataError(f"record is missing required field {key!r}")
    image_id = obj["image_id"]
    if not isinstance(image_id, str):
        raise DataError(f"image_id must be a string, got {image_id!r}")
    width = _as_int(obj["width"], f"{image_id}: width")
    height = _as_int(obj["height"], f"{image_id}: height")
    groundtruth = []
    for i, entry in enumerate(obj.get("groundtruth", []) or []):
        if not isinstance(entry, dict) or "class" not in entry or "box" not in entry:
            raise DataError(f"{image_id}: groundtruth {i} needs 'class' and 'box' fields")
        groundtruth.append(
            GroundTruthObject(str(entry["class"]), _box_from_list(entry["box"], f"{image_id}: groundtruth {i} box"))
        )
    candidates = []
    for i, entry in enumerate(obj.get("candidates", []) or []):
        if not isinstance(entry, dict) or "box" not in entry:
            raise DataError(f"{image_id}: candidate {i} needs a 'box' field")
        label = entry.get("iou_label")
        feats = entry.get("features")
        source = entry.get("source_index")
        candidates.append(
            Candidate(
                box=_box_from_list(entry["box"], f"{image_id}: candidate {i} box"),
                iou_label=None if label is None else float(label),
                features=None if feats is None else np.asarray(feats, dtype=np.float64),
                source_index=None if source is None else _as_int(source, f"{image_id}: candidate {i} source_index"),
            )
        )
    return ImageRecord(image_id, width, height, tuple(groundtruth), tuple(candidates))


def dataset_to_lines(dataset: Dataset) -> list[str]:
    return [json.dumps(record_to_dict(rec), allow_nan=False) for rec in dataset.records]


def dataset_from_lines(lines: Iterable[str]) -> Dataset:
    records = []
    for line_no, line in enumerate(lines, start=1):
        text = line.strip()
        if not text:
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
        try:
            records.append(record_from_dict(obj))
        except DataError as exc:
            raise DataError(f"line {line_no}: {exc}") from exc
    return Dataset(tuple(records))


def read_dataset(path: str | Path) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        return dataset_from_lines(fh)


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in dataset_to_lines(dataset):
            fh.write(line)
            fh.write("\n")


def dataset_digest(dataset: Dataset) -> str:
    """SHA-256 over the canonical JSON Lines serialization of the dataset."""
    digest = hashlib.sha256()
    for line in dataset_to_lines(dataset):
        digest.update(line.encode("utf-8"))
        digest.update(b"\n")
    return digest.hexdigest()
