"""Parasitic-egg detection pipeline: degradation, GAN enhancement,
detection, and a cross-validated evaluation matrix.

Heavy submodules (enhance, detect, experiments) import torch; this
package root stays light so manifest and metric tooling loads fast.
"""

from .dataset import (
    DatasetError,
    DatasetManifest,
    FoldAssignment,
    ImageRecord,
    load_manifest,
    save_manifest,
    stratified_kfold,
)
from .postprocess import (
    EvaluationReport,
    average_over_folds,
    iou,
    match_detections,
    nms,
    precision_recall,
)
from .seeding import derive_seed, rng_for
from .types import (
    Annotation,
    BoundingBox,
    ClassLabel,
    CLASS_ORDER,
    Detection,
    ValidationError,
)

__all__ = [
    "Annotation",
    "BoundingBox",
    "CLASS_ORDER",
    "ClassLabel",
    "DatasetError",
    "DatasetManifest",
    "Detection",
    "EvaluationReport",
    "FoldAssignment",
    "ImageRecord",
    "ValidationError",
    "average_over_folds",
    "derive_seed",
    "iou",
    "load_manifest",
    "match_detections",
    "nms",
    "precision_recall",
    "rng_for",
    "save_manifest",
    "stratified_kfold",
]
