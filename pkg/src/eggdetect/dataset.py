"""Annotated-corpus manifest: loading, validation, and stratified k-fold splitting.

The manifest is a JSON file:

    {"images": [{"id": str, "path": str, "width": int, "height": int,
                 "device": str|null,
                 "annotations": [{"label": "AL|HW|OV|TS|Tri",
                                  "bbox": [xmin, ymin, xmax, ymax]}]}]}

Boxes are continuous pixel coordinates. This module never decodes image
files; paths are opaque strings owned by consumers.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .seeding import rng_for
from .types import Annotation, BoundingBox, ClassLabel, CLASS_ORDER, ValidationError


class DatasetError(ValueError):
    """Malformed or invariant-violating manifest content."""


@dataclass(frozen=True)
class ImageRecord:
    """One image plus its ground truth and provenance."""

    id: str
    path: str
    width: int
    height: int
    annotations: tuple[Annotation, ...] = ()
    device_tag: str | None = None

    def validate(self) -> None:
        if not self.id:
            raise DatasetError("record with empty id")
        if self.width <= 0 or self.height <= 0:
            raise DatasetError(f"record {self.id!r}: non-positive dimensions")
        for ann in self.annotations:
            try:
                ann.validate(self.width, self.height)
            except ValidationError as exc:
                raise DatasetError(f"record {self.id!r}: {exc}") from exc

    def majority_label(self) -> ClassLabel | None:
        """Most frequent annotation label; declaration-order tie-break."""
        if not self.annotations:
            return None
        counts = Counter(ann.label for ann in self.annotations)
        best = max(counts.values())
        for label in CLASS_ORDER:
            if counts.get(label) == best:
                return label
        return None


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ImageRecord, ...]
    class_counts: dict[ClassLabel, int] = field(compare=False, default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "class_counts", class_histogram(self))

    def __len__(self) -> int:
        return len(self.records)

    def record_by_id(self, record_id: str) -> ImageRecord:
        for rec in self.records:
            if rec.id == record_id:
                return rec
        raise KeyError(record_id)

    def subset(self, ids: set[str]) -> "DatasetManifest":
        return DatasetManifest(tuple(r for r in self.records if r.id in ids))


def class_histogram(manifest: DatasetManifest) -> dict[ClassLabel, int]:
    """Annotation (not image) counts per class."""
    counts = {label: 0 for label in CLASS_ORDER}
    for rec in manifest.records:
        for ann in rec.annotations:
            counts[ann.label] += 1
    return counts


def _parse_record(raw: dict) -> ImageRecord:
    rec_id = raw.get("id")
    if not isinstance(rec_id, str) or not rec_id:
        raise DatasetError(f"image entry without a string id: {raw!r}")
    try:
        annotations = []
        for ann in raw.get("annotations", []):
            label_raw = ann["label"]
            try:
                label = ClassLabel(label_raw)
            except ValueError:
                raise DatasetError(
                    f"record {rec_id!r}: unknown label {label_raw!r}"
                ) from None
            coords = ann["bbox"]
            if len(coords) != 4:
                raise DatasetError(f"record {rec_id!r}: bbox must have 4 coordinates")
            annotations.append(Annotation(BoundingBox(*map(float, coords)), label))
        record = ImageRecord(
            id=rec_id,
            path=str(raw["path"]),
            width=int(raw["width"]),
            height=int(raw["height"]),
            annotations=tuple(annotations),
            device_tag=raw.get("device"),
        )
    except DatasetError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"record {rec_id!r}: {exc}") from exc
    record.validate()
    return record


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and validate a manifest file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest {path} is not valid JSON: {exc}") from exc
    return manifest_from_dict(raw)


def manifest_from_dict(raw: dict) -> DatasetManifest:
    if not isinstance(raw, dict) or not isinstance(raw.get("images"), list):
        raise DatasetError('manifest must be an object with an "images" list')
    records = []
    seen: set[str] = set()
    for entry in raw["images"]:
        record = _parse_record(entry)
        if record.id in seen:
            raise DatasetError(f"duplicate record id {record.id!r}")
        seen.add(record.id)
        records.append(record)
    return DatasetManifest(tuple(records))


def manifest_to_dict(manifest: DatasetManifest) -> dict:
    return {
        "images": [
            {
                "id": rec.id,
                "path": rec.path,
                "width": rec.width,
                "height": rec.height,
                "device": rec.device_tag,
                "annotations": [
                    {"label": ann.label.value, "bbox": list(ann.bbox.as_tuple())}
                    for ann in rec.annotations
                ],
            }
            for rec in manifest.records
        ]
    }


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(manifest_to_dict(manifest), indent=2), encoding="utf-8"
    )


@dataclass(frozen=True)
class FoldAssignment:
    """Disjoint, exhaustive assignment of record ids to folds."""

    k: int
    seed: int
    assignment: dict[str, int]

    def fold_ids(self, fold: int) -> set[str]:
        return {rid for rid, f in self.assignment.items() if f == fold}

    def split(self, fold: int) -> tuple[set[str], set[str]]:
        """(train ids, test ids) with the given fold held out."""
        test = self.fold_ids(fold)
        train = set(self.assignment) - test
        return train, test


def stratified_kfold(manifest: DatasetManifest, k: int, seed: int) -> FoldAssignment:
    """Stratify by each image's majority class label.

    Ids are grouped per class, shuffled under a per-class seeded stream
    (independent of record order on disk), and dealt round-robin. The
    starting fold rotates between classes so the remainder images spread
    across folds instead of piling onto fold 0.
    """
    if k < 2:
        raise DatasetError(f"k must be >= 2, got {k}")
    groups: dict[ClassLabel | None, list[str]] = {label: [] for label in CLASS_ORDER}
    groups[None] = []
    for rec in manifest.records:
        groups[rec.majority_label()].append(rec.id)
    for label in CLASS_ORDER:
        n = len(groups[label])
        if 0 < n < k:
            raise DatasetError(
                f"class {label.value} has {n} images, fewer than k={k}"
            )

    assignment: dict[str, int] = {}
    offset = 0
    for label in (*CLASS_ORDER, None):
        ids = sorted(groups[label])
        if not ids:
            continue
        rng = rng_for(seed, "fold", label.value if label else "<none>")
        rng.shuffle(ids)
        for i, rid in enumerate(ids):
            assignment[rid] = (offset + i) % k
        offset = (offset + len(ids)) % k
    return FoldAssignment(k=k, seed=seed, assignment=assignment)


def save_folds(folds: FoldAssignment, path: str | Path) -> None:
    payload = {"k": folds.k, "seed": folds.seed, "assignment": folds.assignment}
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def load_folds(path: str | Path) -> FoldAssignment:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return FoldAssignment(
            k=int(raw["k"]),
            seed=int(raw["seed"]),
            assignment={str(rid): int(f) for rid, f in raw["assignment"].items()},
        )
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"cannot load fold file {path}: {exc}") from exc
