"""Geometry and evaluation kernel: IoU, NMS, matching, precision/recall.

Everything here is a pure function. Conventions, fixed once for the whole
pipeline:

* IoU strictly greater than the threshold counts as a positive match; an
  overlap of exactly the threshold is negative.
* NMS is greedy by descending score; ties are broken by box coordinates
  and then label so the result is deterministic for any input order.
* Matching is per class, greedy by score, each detection taking the
  highest-IoU unmatched ground-truth box.
* "All" precision/recall is the micro average (pooled counts); the macro
  average (mean of defined per-class metrics) is carried alongside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .types import Annotation, BoundingBox, ClassLabel, CLASS_ORDER, Detection


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two valid boxes."""
    ix = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    iy = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU for (N, 4) and (M, 4) arrays of [xmin, ymin, xmax, ymax]."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    iy = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0.0, inter / union, 0.0)


def nms(
    dets: list[Detection], iou_threshold: float = 0.5, class_aware: bool = True
) -> list[Detection]:
    """Greedy non-maximum suppression, output in descending score order.

    With class_aware=True a kept detection only suppresses detections of
    its own class.
    """
    if not dets:
        return []
    ordered = sorted(dets, key=Detection.sort_key)
    boxes = np.array([d.bbox.as_tuple() for d in ordered], dtype=np.float64)
    ious = iou_matrix(boxes, boxes)
    labels = [d.label for d in ordered]
    alive = np.ones(len(ordered), dtype=bool)
    kept: list[Detection] = []
    for i in range(len(ordered)):
        if not alive[i]:
            continue
        kept.append(ordered[i])
        overlap = ious[i] > iou_threshold
        if class_aware:
            overlap &= np.array([lab == labels[i] for lab in labels])
        overlap[i] = False
        alive &= ~overlap
    return kept


@dataclass(frozen=True)
class MatchResult:
    """Per-class detection/ground-truth match counts for one image."""

    tp: dict[ClassLabel, int] = field(default_factory=dict)
    fp: dict[ClassLabel, int] = field(default_factory=dict)
    fn: dict[ClassLabel, int] = field(default_factory=dict)

    def counts(self, label: ClassLabel) -> tuple[int, int, int]:
        return (self.tp.get(label, 0), self.fp.get(label, 0), self.fn.get(label, 0))


def match_detections(
    dets: list[Detection], truth: list[Annotation], iou_threshold: float = 0.5
) -> MatchResult:
    """Greedy score-ordered one-to-one matching within each class.

    A detection is a true positive when its IoU with some not-yet-matched
    ground-truth box of the same class exceeds the threshold; it claims the
    highest-IoU such box. Everything else is a false positive; leftover
    ground truth is false negatives.
    """
    tp = {label: 0 for label in CLASS_ORDER}
    fp = {label: 0 for label in CLASS_ORDER}
    fn = {label: 0 for label in CLASS_ORDER}
    for label in CLASS_ORDER:
        class_dets = sorted(
            (d for d in dets if d.label == label), key=Detection.sort_key
        )
        class_truth = [t.bbox for t in truth if t.label == label]
        matched = [False] * len(class_truth)
        for det in class_dets:
            best_iou = iou_threshold
            best_idx = -1
            for idx, gt_box in enumerate(class_truth):
                if matched[idx]:
                    continue
                overlap = iou(det.bbox, gt_box)
                if overlap > best_iou:
                    best_iou = overlap
                    best_idx = idx
            if best_idx >= 0:
                matched[best_idx] = True
                tp[label] += 1
            else:
                fp[label] += 1
        fn[label] = matched.count(False)
    return MatchResult(tp=tp, fp=fp, fn=fn)


def _ratio(num: int, den: int) -> float | None:
    return num / den if den > 0 else None


@dataclass(frozen=True)
class EvaluationReport:
    """Per-class and aggregate precision/recall for one setting.

    Metrics with a zero denominator are None (undefined), never 0/0.
    ``counts`` carries the pooled (tp, fp, fn) per class so downstream
    reports can surface raw false-positive counts.
    """

    precision: dict[ClassLabel, float | None]
    recall: dict[ClassLabel, float | None]
    all_precision: float | None
    all_recall: float | None
    macro_precision: float | None
    macro_recall: float | None
    counts: dict[ClassLabel, tuple[int, int, int]]
    setting: tuple[str, str] = ("", "")
    fold_count: int = 1
    partial_metrics: tuple[str, ...] = ()

    def metric(self, kind: str, column: str) -> float | None:
        """kind in {precision, recall}; column a class value or "All"."""
        table = self.precision if kind == "precision" else self.recall
        if column == "All":
            return self.all_precision if kind == "precision" else self.all_recall
        return table[ClassLabel(column)]

    def to_dict(self) -> dict:
        return {
            "setting": list(self.setting),
            "fold_count": self.fold_count,
            "precision": {lab.value: self.precision[lab] for lab in CLASS_ORDER},
            "recall": {lab.value: self.recall[lab] for lab in CLASS_ORDER},
            "all_precision": self.all_precision,
            "all_recall": self.all_recall,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "counts": {lab.value: list(self.counts[lab]) for lab in CLASS_ORDER},
            "partial_metrics": list(self.partial_metrics),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "EvaluationReport":
        return cls(
            precision={lab: raw["precision"][lab.value] for lab in CLASS_ORDER},
            recall={lab: raw["recall"][lab.value] for lab in CLASS_ORDER},
            all_precision=raw["all_precision"],
            all_recall=raw["all_recall"],
            macro_precision=raw["macro_precision"],
            macro_recall=raw["macro_recall"],
            counts={lab: tuple(raw["counts"][lab.value]) for lab in CLASS_ORDER},
            setting=tuple(raw["setting"]),
            fold_count=raw["fold_count"],
            partial_metrics=tuple(raw.get("partial_metrics", ())),
        )


def precision_recall(
    matches: list[MatchResult], setting: tuple[str, str] = ("", "")
) -> EvaluationReport:
    """Pool per-image counts, then compute per-class and micro/macro metrics."""
    if not matches:
        raise ValueError("precision_recall requires at least one MatchResult")
    pooled = {label: [0, 0, 0] for label in CLASS_ORDER}
    for m in matches:
        for label in CLASS_ORDER:
            t, f, n = m.counts(label)
            pooled[label][0] += t
            pooled[label][1] += f
            pooled[label][2] += n
    precision = {
        lab: _ratio(c[0], c[0] + c[1]) for lab, c in pooled.items()
    }
    recall = {lab: _ratio(c[0], c[0] + c[2]) for lab, c in pooled.items()}
    tp = sum(c[0] for c in pooled.values())
    fp = sum(c[1] for c in pooled.values())
    fn = sum(c[2] for c in pooled.values())
    defined_p = [v for v in precision.values() if v is not None]
    defined_r = [v for v in recall.values() if v is not None]
    return EvaluationReport(
        precision=precision,
        recall=recall,
        all_precision=_ratio(tp, tp + fp),
        all_recall=_ratio(tp, tp + fn),
        macro_precision=sum(defined_p) / len(defined_p) if defined_p else None,
        macro_recall=sum(defined_r) / len(defined_r) if defined_r else None,
        counts={lab: tuple(c) for lab, c in pooled.items()},
        setting=setting,
    )


def _mean_defined(values: list[float | None]) -> tuple[float | None, bool]:
    defined = [v for v in values if v is not None]
    partial = len(defined) != len(values)
    if not defined:
        return None, partial
    return sum(defined) / len(defined), partial


def average_over_folds(reports: list[EvaluationReport]) -> EvaluationReport:
    """Arithmetic mean of each defined metric across fold reports.

    Folds where a metric is undefined are excluded from that metric's mean
    and recorded in partial_metrics. Counts are pooled across folds.
    """
    if not reports:
        raise ValueError("average_over_folds requires at least one report")
    setting = reports[0].setting
    if any(r.setting != setting for r in reports):
        raise ValueError(
            f"mismatched setting tags: {sorted({r.setting for r in reports})}"
        )
    precision: dict[ClassLabel, float | None] = {}
    recall: dict[ClassLabel, float | None] = {}
    partial: list[str] = []
    for label in CLASS_ORDER:
        precision[label], was_partial = _mean_defined(
            [r.precision[label] for r in reports]
        )
        if was_partial:
            partial.append(f"precision/{label.value}")
        recall[label], was_partial = _mean_defined([r.recall[label] for r in reports])
        if was_partial:
            partial.append(f"recall/{label.value}")
    all_p, p_partial = _mean_defined([r.all_precision for r in reports])
    all_r, r_partial = _mean_defined([r.all_recall for r in reports])
    macro_p, _ = _mean_defined([r.macro_precision for r in reports])
    macro_r, _ = _mean_defined([r.macro_recall for r in reports])
    if p_partial:
        partial.append("precision/All")
    if r_partial:
        partial.append("recall/All")
    counts = {
        lab: tuple(
            sum(r.counts[lab][i] for r in reports) for i in range(3)
        )
        for lab in CLASS_ORDER
    }
    return EvaluationReport(
        precision=precision,
        recall=recall,
        all_precision=all_p,
        all_recall=all_r,
        macro_precision=macro_p,
        macro_recall=macro_r,
        counts=counts,
        setting=setting,
        fold_count=sum(r.fold_count for r in reports),
        partial_metrics=tuple(partial),
    )


def with_setting(report: EvaluationReport, setting: tuple[str, str]) -> EvaluationReport:
    return replace(report, setting=setting)


def is_finite_report(report: EvaluationReport) -> bool:
    values = [
        *report.precision.values(),
        *report.recall.values(),
        report.all_precision,
        report.all_recall,
    ]
    return all(v is None or math.isfinite(v) for v in values)
