"""Two-stage style object detection with a compact trainable baseline.

Two backbones are offered behind one interface. The "toy" backbone is a
small dense-anchor detector (shallow conv net, per-anchor classification
and box regression, hard negative mining) that trains in seconds on CPU
and exists so the full pipeline can run end to end quickly. The
"resnet50_fpn" backbone is the torchvision Faster R-CNN implementation
for full-scale runs; its internal NMS and score filtering are disabled so
postprocessing stays in one place.

Class ids follow the detection convention: 0 is background, 1..5 map to
CLASS_ORDER. Public APIs accept and return [0, 1] float32 RGB images and
Detection objects in original image coordinates.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import cv2
import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoints import load_payload, save_payload
from .degrade import affine_augment_annotations, check_image, sample_affine
from .seeding import derive_seed, rng_for
from .types import Annotation, BoundingBox, ClassLabel, CLASS_ORDER, Detection, ValidationError

CHECKPOINT_KIND = "eggdetect-detector"

BACKBONES = ("toy", "resnet50_fpn")
PRETRAINED_SOURCES = ("none", "backbone", "detector")

TOY_STRIDE = 8
# anchors never regress wider than exp(4.135) ~ 62x their prior
MAX_LOG_SCALE = math.log(1000.0 / 16.0)


@dataclass(frozen=True)
class DetectorConfig:
    backbone: str = "toy"
    num_classes: int = len(CLASS_ORDER)
    pretrained_source: str = "none"
    score_threshold: float = 0.5
    max_detections: int = 100
    input_size: int = 64
    anchor_scales: tuple[int, ...] = (16, 24, 32)
    anchor_ratios: tuple[float, ...] = (0.6, 1.0, 1.6)

    def validate(self) -> None:
        if self.backbone not in BACKBONES:
            raise ValidationError(f"unknown backbone {self.backbone!r}; expected one of {BACKBONES}")
        if self.num_classes != len(CLASS_ORDER):
            raise ValidationError(f"num_classes must be {len(CLASS_ORDER)}")
        if self.pretrained_source not in PRETRAINED_SOURCES:
            raise ValidationError(
                f"unknown pretrained_source {self.pretrained_source!r}; "
                f"expected one of {PRETRAINED_SOURCES}"
            )
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValidationError("score_threshold must be in [0, 1]")
        if self.max_detections < 1:
            raise ValidationError("max_detections must be >= 1")
        if self.input_size < 2 * TOY_STRIDE or self.input_size % TOY_STRIDE:
            raise ValidationError(f"input_size must be a multiple of {TOY_STRIDE}, >= {2 * TOY_STRIDE}")
        if not self.anchor_scales or any(s <= 0 for s in self.anchor_scales):
            raise ValidationError("anchor_scales must be positive")
        if not self.anchor_ratios or any(r <= 0 for r in self.anchor_ratios):
            raise ValidationError("anchor_ratios must be positive")


def _make_anchors(cfg: DetectorConfig) -> torch.Tensor:
    """Grid anchors in xyxy order matching the head's (y, x, anchor) layout."""
    feat = cfg.input_size // TOY_STRIDE
    shapes = []
    for scale in cfg.anchor_scales:
        for ratio in cfg.anchor_ratios:
            shapes.append((scale * math.sqrt(ratio), scale / math.sqrt(ratio)))
    boxes = []
    for iy in range(feat):
        cy = (iy + 0.5) * TOY_STRIDE
        for ix in range(feat):
            cx = (ix + 0.5) * TOY_STRIDE
            for w, h in shapes:
                boxes.append((cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2))
    return torch.tensor(boxes, dtype=torch.float32)


def _encode(gt: torch.Tensor, anchors: torch.Tensor) -> torch.Tensor:
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    ax = anchors[:, 0] + aw / 2
    ay = anchors[:, 1] + ah / 2
    gw = (gt[:, 2] - gt[:, 0]).clamp(min=1e-4)
    gh = (gt[:, 3] - gt[:, 1]).clamp(min=1e-4)
    gx = gt[:, 0] + gw / 2
    gy = gt[:, 1] + gh / 2
    return torch.stack(
        [(gx - ax) / aw, (gy - ay) / ah, torch.log(gw / aw), torch.log(gh / ah)], dim=1
    )


def _decode(deltas: torch.Tensor, anchors: torch.Tensor) -> torch.Tensor:
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    ax = anchors[:, 0] + aw / 2
    ay = anchors[:, 1] + ah / 2
    cx = ax + deltas[:, 0] * aw
    cy = ay + deltas[:, 1] * ah
    w = aw * torch.exp(deltas[:, 2].clamp(max=MAX_LOG_SCALE))
    h = ah * torch.exp(deltas[:, 3].clamp(max=MAX_LOG_SCALE))
    return torch.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], dim=1)


def _box_iou(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    lt = torch.max(a[:, None, :2], b[None, :, :2])
    rb = torch.min(a[:, None, 2:], b[None, :, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[:, :, 0] * wh[:, :, 1]
    union = area_a[:, None] + area_b[None, :] - inter
    return torch.where(union > 0, inter / union, torch.zeros_like(inter))


class ToyDetector(nn.Module):
    """Single-shot dense-anchor detector over a stride-8 feature map."""

    POS_IOU = 0.5
    NEG_IOU = 0.4
    NEG_PER_POS = 3
    MIN_NEGATIVES = 4
    BOX_LOSS_WEIGHT = 2.0
    # mild smoothing keeps scores off 1.0 so NMS ranking stays informative
    LABEL_SMOOTHING = 0.05

    def __init__(self, cfg: DetectorConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.num_anchors = len(cfg.anchor_scales) * len(cfg.anchor_ratios)
        self.num_outputs = cfg.num_classes + 1  # index 0 is background

        def block(cin: int, cout: int, stride: int) -> nn.Sequential:
            return nn.Sequential(
                nn.Conv2d(cin, cout, 3, stride, 1),
                nn.GroupNorm(8, cout),
                nn.ReLU(inplace=True),
            )

        self.backbone = nn.Sequential(
            block(3, 32, 2),
            block(32, 64, 2),
            block(64, 128, 2),
            block(128, 128, 1),
            block(128, 128, 1),
        )
        self.cls_head = nn.Conv2d(128, self.num_anchors * self.num_outputs, 3, 1, 1)
        self.box_head = nn.Conv2d(128, self.num_anchors * 4, 3, 1, 1)
        self.register_buffer("anchors", _make_anchors(cfg))

    def _predict(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        feats = self.backbone(images)
        n, _, fh, fw = feats.shape
        cls = self.cls_head(feats).permute(0, 2, 3, 1).reshape(n, fh * fw * self.num_anchors, self.num_outputs)
        box = self.box_head(feats).permute(0, 2, 3, 1).reshape(n, fh * fw * self.num_anchors, 4)
        return cls, box

    def _assign(self, gt_boxes: torch.Tensor, gt_labels: torch.Tensor):
        """Per-anchor class targets, matched gt index, and ignore mask."""
        n_anchors = self.anchors.shape[0]
        labels = torch.zeros(n_anchors, dtype=torch.int64)
        matched = torch.full((n_anchors,), -1, dtype=torch.int64)
        ignore = torch.zeros(n_anchors, dtype=torch.bool)
        if gt_boxes.numel() == 0:
            return labels, matched, ignore
        iou = _box_iou(self.anchors, gt_boxes)
        best_iou, best_gt = iou.max(dim=1)
        pos = best_iou >= self.POS_IOU
        labels[pos] = gt_labels[best_gt[pos]]
        matched[pos] = best_gt[pos]
        ignore = (best_iou >= self.NEG_IOU) & ~pos
        # every gt trains at least its single best anchor
        best_anchor = iou.argmax(dim=0)
        labels[best_anchor] = gt_labels
        matched[best_anchor] = torch.arange(gt_boxes.shape[0])
        ignore[best_anchor] = False
        return labels, matched, ignore

    def _loss(self, cls: torch.Tensor, box: torch.Tensor, targets: Sequence[dict]) -> dict:
        cls_losses = []
        box_losses = []
        for i, target in enumerate(targets):
            labels, matched, ignore = self._assign(target["boxes"], target["labels"])
            per_anchor = F.cross_entropy(
                cls[i], labels, reduction="none", label_smoothing=self.LABEL_SMOOTHING
            )
            pos_mask = (labels > 0) & ~ignore
            neg_mask = (labels == 0) & ~ignore
            num_pos = int(pos_mask.sum())
            # SSD-style hard negative mining keeps the 3:1 worst offenders
            keep = min(max(self.NEG_PER_POS * num_pos, self.MIN_NEGATIVES), int(neg_mask.sum()))
            neg_loss = per_anchor[neg_mask].topk(keep).values.sum() if keep else cls[i].sum() * 0
            denom = max(num_pos, 1)
            cls_losses.append((per_anchor[pos_mask].sum() + neg_loss) / denom)
            if num_pos:
                encoded = _encode(target["boxes"][matched[pos_mask]], self.anchors[pos_mask])
                box_losses.append(
                    F.smooth_l1_loss(box[i][pos_mask], encoded, reduction="sum")
                    * self.BOX_LOSS_WEIGHT
                    / denom
                )
            else:
                box_losses.append(box[i].sum() * 0)
        return {
            "classification": torch.stack(cls_losses).mean(),
            "box_reg": torch.stack(box_losses).mean(),
        }

    def forward(self, images: torch.Tensor, targets: Sequence[dict] | None = None):
        cls, box = self._predict(images)
        if self.training:
            if targets is None:
                raise ValidationError("training forward requires targets")
            return self._loss(cls, box, targets)
        size = float(self.cfg.input_size)
        results = []
        probs = F.softmax(cls, dim=2)
        for i in range(images.shape[0]):
            scores, fg = probs[i, :, 1:].max(dim=1)
            boxes = _decode(box[i], self.anchors).clamp(min=0.0, max=size)
            results.append({"boxes": boxes, "scores": scores, "labels": fg + 1})
        return results


def _build_preset(cfg: DetectorConfig) -> nn.Module:
    """Torchvision Faster R-CNN with internal postprocessing disabled."""
    from torchvision.models.detection import fasterrcnn_resnet50_fpn
    from torchvision.models.detection.faster_rcnn import FastRCNNPredictor

    common = dict(
        min_size=cfg.input_size,
        box_score_thresh=0.0,
        box_nms_thresh=1.0,
        box_detections_per_img=cfg.max_detections,
    )
    if cfg.pretrained_source == "detector":
        model = fasterrcnn_resnet50_fpn(weights="DEFAULT", **common)
        in_features = model.roi_heads.box_predictor.cls_score.in_features
        model.roi_heads.box_predictor = FastRCNNPredictor(in_features, cfg.num_classes + 1)
    else:
        weights_backbone = "DEFAULT" if cfg.pretrained_source == "backbone" else None
        model = fasterrcnn_resnet50_fpn(
            weights=None,
            weights_backbone=weights_backbone,
            num_classes=cfg.num_classes + 1,
            **common,
        )
    return model


@dataclass
class DetectorModel:
    module: nn.Module
    config: DetectorConfig
    training_meta: dict


def build_detector(config: DetectorConfig | None = None, seed: int = 0) -> DetectorModel:
    cfg = config or DetectorConfig()
    cfg.validate()
    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(seed, "detector-init"))
        module = ToyDetector(cfg) if cfg.backbone == "toy" else _build_preset(cfg)
    module.eval()
    meta = {"epochs": 0, "seed": seed, "history": {}}
    return DetectorModel(module=module, config=cfg, training_meta=meta)


def _resize_sample(
    image: np.ndarray, annotations: Sequence[Annotation], size: int
) -> tuple[np.ndarray, list[Annotation]]:
    img = check_image(image)
    h, w = img.shape[:2]
    if (h, w) == (size, size):
        return img, list(annotations)
    resized = cv2.resize(img, (size, size), interpolation=cv2.INTER_AREA)
    sx, sy = size / w, size / h
    scaled = []
    for ann in annotations:
        b = ann.bbox
        scaled.append(
            Annotation(
                bbox=BoundingBox(b.xmin * sx, b.ymin * sy, b.xmax * sx, b.ymax * sy),
                label=ann.label,
            )
        )
    return resized, scaled


def _to_target(annotations: Sequence[Annotation]) -> dict:
    if annotations:
        boxes = torch.tensor([a.bbox.as_tuple() for a in annotations], dtype=torch.float32)
        labels = torch.tensor(
            [CLASS_ORDER.index(a.label) + 1 for a in annotations], dtype=torch.int64
        )
    else:
        boxes = torch.zeros((0, 4), dtype=torch.float32)
        labels = torch.zeros((0,), dtype=torch.int64)
    return {"boxes": boxes, "labels": labels}


def _to_batch(images: Sequence[np.ndarray]) -> torch.Tensor:
    return torch.from_numpy(np.stack([img.transpose(2, 0, 1) for img in images]))


def train_detector(
    model: DetectorModel,
    samples: Sequence[tuple[np.ndarray, Sequence[Annotation]]],
    *,
    epochs: int,
    seed: int = 0,
    batch_size: int = 16,
    learning_rate: float = 1e-3,
    augment: bool = True,
) -> DetectorModel:
    """Train on (image, annotations) samples; returns a new model.

    Images are resized to the configured input size with annotations
    scaled to match. With augment on, each image gets a seeded random
    flip / quarter-turn per epoch; boxes falling outside are dropped and
    background-only images remain valid training input.
    """
    if epochs < 0:
        raise ValidationError("epochs must be >= 0")
    if not samples:
        raise ValidationError("no training samples given")
    out_model = DetectorModel(
        module=copy.deepcopy(model.module),
        config=model.config,
        training_meta=copy.deepcopy(model.training_meta),
    )
    if epochs == 0:
        return out_model
    size = model.config.input_size
    prepared = [_resize_sample(img, anns, size) for img, anns in samples]
    module = out_model.module
    module.train()

    history: dict[str, list[float]] = {}
    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(seed, "train-detector"))
        optimizer = torch.optim.Adam(module.parameters(), lr=learning_rate)
        # final quarter at a tenth of the rate sharpens box regression
        scheduler = torch.optim.lr_scheduler.StepLR(
            optimizer, step_size=max(3 * epochs // 4, 1), gamma=0.1
        )
        for epoch in range(epochs):
            sums: dict[str, float] = {}
            order = rng_for(seed, "order", epoch).permutation(len(prepared))
            batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
            for batch in batches:
                images = []
                targets = []
                for idx in batch:
                    img, anns = prepared[idx]
                    if augment:
                        spec = sample_affine(derive_seed(seed, "aug", epoch, int(idx)))
                        img, anns = affine_augment_annotations(img, anns, spec)
                    images.append(img)
                    targets.append(_to_target(anns))
                optimizer.zero_grad()
                if isinstance(module, ToyDetector):
                    losses = module(_to_batch(images), targets)
                else:
                    tensors = [torch.from_numpy(img.transpose(2, 0, 1)) for img in images]
                    losses = module(tensors, targets)
                total = sum(losses.values())
                total.backward()
                optimizer.step()
                for key, value in losses.items():
                    sums[key] = sums.get(key, 0.0) + float(value.detach())
                sums["total"] = sums.get("total", 0.0) + float(total.detach())
            scheduler.step()
            for key, value in sums.items():
                history.setdefault(key, []).append(value / len(batches))

    module.eval()
    meta = out_model.training_meta
    old_hist = meta.get("history", {})
    meta["history"] = {
        key: list(old_hist.get(key, [])) + list(history.get(key, []))
        for key in set(old_hist) | set(history)
    }
    meta["epochs"] = meta.get("epochs", 0) + epochs
    meta["seed"] = seed
    return out_model


def _result_to_detections(
    result: dict, scale_x: float, scale_y: float, width: int, height: int
) -> list[Detection]:
    boxes = result["boxes"].detach().numpy()
    scores = result["scores"].detach().numpy()
    labels = result["labels"].detach().numpy()
    detections = []
    for (x0, y0, x1, y1), score, label_id in zip(boxes, scores, labels):
        if not 1 <= label_id <= len(CLASS_ORDER):
            continue
        raw = BoundingBox(
            float(x0) * scale_x, float(y0) * scale_y, float(x1) * scale_x, float(y1) * scale_y
        )
        if raw.xmax <= raw.xmin or raw.ymax <= raw.ymin:
            continue
        clipped = raw.clipped(width, height)
        if clipped is None:
            continue
        detections.append(
            Detection(bbox=clipped, label=CLASS_ORDER[label_id - 1], score=float(score))
        )
    return detections


def infer(
    model: DetectorModel,
    images: Sequence[np.ndarray],
    *,
    score_threshold: float | None = None,
    max_detections: int | None = None,
) -> list[list[Detection]]:
    """Detect on each image, reporting boxes in original coordinates.

    Output is score-filtered, deterministically sorted, and capped, but
    deliberately not NMS-suppressed; suppression belongs to postprocessing.
    Images run through the network one at a time, so results do not depend
    on how a workload is grouped into calls.
    """
    threshold = model.config.score_threshold if score_threshold is None else score_threshold
    cap = model.config.max_detections if max_detections is None else max_detections
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError("score_threshold must be in [0, 1]")
    if cap < 1:
        raise ValidationError("max_detections must be >= 1")
    size = model.config.input_size
    module = model.module
    module.eval()

    checked = [check_image(img) for img in images]
    resized = []
    for img in checked:
        if img.shape[:2] != (size, size):
            img = cv2.resize(img, (size, size), interpolation=cv2.INTER_AREA)
        resized.append(img)

    outputs: list[list[Detection]] = []
    with torch.no_grad():
        for img, original in zip(resized, checked):
            if isinstance(module, ToyDetector):
                result = module(_to_batch([img]))[0]
            else:
                result = module([torch.from_numpy(img.transpose(2, 0, 1))])[0]
            h, w = original.shape[:2]
            dets = _result_to_detections(result, w / size, h / size, w, h)
            dets = [d for d in dets if d.score >= threshold]
            dets.sort(key=Detection.sort_key)
            outputs.append(dets[:cap])
    return outputs


def save_detector(model: DetectorModel, path) -> None:
    save_payload(
        path,
        CHECKPOINT_KIND,
        config=asdict(model.config),
        training_meta=model.training_meta,
        state=model.module.state_dict(),
    )


def load_detector(path) -> DetectorModel:
    payload = load_payload(path, kind=CHECKPOINT_KIND)
    raw = dict(payload["config"])
    raw["anchor_scales"] = tuple(raw.get("anchor_scales", ()))
    raw["anchor_ratios"] = tuple(raw.get("anchor_ratios", ()))
    cfg = DetectorConfig(**raw)
    cfg.validate()
    # pretrained weights live in the checkpoint now; avoid a re-download
    build_cfg = cfg
    if cfg.backbone != "toy" and cfg.pretrained_source != "none":
        build_cfg = DetectorConfig(**{**raw, "pretrained_source": "none"})
    with torch.random.fork_rng():
        torch.manual_seed(0)
        module = ToyDetector(cfg) if cfg.backbone == "toy" else _build_preset(build_cfg)
    module.load_state_dict(payload["state"])
    module.eval()
    return DetectorModel(module=module, config=cfg, training_meta=payload["training_meta"])
