"""Core domain types shared across the pipeline."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class ClassLabel(str, Enum):
    """The five egg classes of the corpus."""

    AL = "AL"
    HW = "HW"
    OV = "OV"
    TS = "TS"
    Tri = "Tri"

    def __str__(self) -> str:
        return self.value


# Canonical column order for reports and tables.
CLASS_ORDER: tuple[ClassLabel, ...] = (
    ClassLabel.AL,
    ClassLabel.HW,
    ClassLabel.OV,
    ClassLabel.TS,
    ClassLabel.Tri,
)


class ValidationError(ValueError):
    """Raised when input data violates a declared invariant."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in continuous pixel coordinates, xmin < xmax and ymin < ymax."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def validate(self) -> None:
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValidationError(f"degenerate box {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    def clipped(self, width: float, height: float) -> "BoundingBox | None":
        """Clip to an image extent; None when nothing remains."""
        xmin = max(self.xmin, 0.0)
        ymin = max(self.ymin, 0.0)
        xmax = min(self.xmax, float(width))
        ymax = min(self.ymax, float(height))
        if xmin >= xmax or ymin >= ymax:
            return None
        return BoundingBox(xmin, ymin, xmax, ymax)


@dataclass(frozen=True)
class Annotation:
    """One ground-truth box with its class label."""

    bbox: BoundingBox
    label: ClassLabel

    def validate(self, width: int, height: int) -> None:
        self.bbox.validate()
        b = self.bbox
        if b.xmin < 0 or b.ymin < 0 or b.xmax > width or b.ymax > height:
            raise ValidationError(
                f"box {b.as_tuple()} outside image extent {width}x{height}"
            )


@dataclass(frozen=True)
class Detection:
    """A scored, labeled box in original image pixel coordinates."""

    bbox: BoundingBox
    label: ClassLabel
    score: float

    def validate(self) -> None:
        self.bbox.validate()
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"score {self.score} outside [0, 1]")

    def sort_key(self) -> tuple:
        """Descending-score order with deterministic tie-breaking."""
        return (-self.score, self.bbox.as_tuple(), self.label.value)
