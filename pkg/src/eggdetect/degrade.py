"""Seeded synthetic degradation: the artificial low-quality image domain.

Images are H x W x 3 float32 arrays, RGB, values in [0, 1]. Every operator
is a pure function of its inputs, clamps back into [0, 1], and never touches
global random state; corpus-level randomness comes from per-image seeds
derived with :mod:`eggdetect.seeding` so parallel and serial application
produce identical bytes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import cv2
import numpy as np
from matplotlib import colors as mcolors

from .types import BoundingBox, Annotation, ValidationError

# Declared parameter ranges for a valid spec; configs must stay inside.
SPEC_RANGES = {
    "blur_length": (1, 10_000),
    "blur_angle": (0.0, 180.0),
    "hue_shift": (-0.1, 0.1),
    "saturation_factor": (0.5, 1.5),
    "brightness_delta": (-0.3, 0.3),
    "contrast_factor": (0.5, 1.5),
}

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def check_image(img: np.ndarray) -> np.ndarray:
    """Validate the canonical image representation, returning it as float32."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValidationError(f"expected HxWx3 image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValidationError(f"empty image {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValidationError("image values outside [0, 1]")
    return img.astype(np.float32, copy=False)


def _clamp(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0).astype(np.float32, copy=False)


def motion_blur_kernel(length: int, angle: float) -> np.ndarray:
    """Normalized 1-pixel-wide line kernel of the given length and angle.

    Angle 0 is horizontal; y grows downward, so the line is rasterized
    along (cos a, -sin a). Length 1 is the identity kernel.
    """
    if length < 1:
        raise ValidationError(f"blur length must be >= 1, got {length}")
    if length == 1:
        return np.ones((1, 1), dtype=np.float32)
    canvas = np.zeros((length, length), dtype=np.float32)
    c = (length - 1) / 2.0
    rad = math.radians(angle)
    dx = math.cos(rad) * (length - 1) / 2.0
    dy = -math.sin(rad) * (length - 1) / 2.0
    p0 = (int(round(c - dx)), int(round(c - dy)))
    p1 = (int(round(c + dx)), int(round(c + dy)))
    cv2.line(canvas, p0, p1, 1.0, thickness=1)
    return canvas / canvas.sum()


def motion_blur(img: np.ndarray, length: int, angle: float) -> np.ndarray:
    """Convolve with a line kernel; borders replicate the edge pixel."""
    if length == 1:
        return np.asarray(img, dtype=np.float32).copy()
    kernel = motion_blur_kernel(length, angle)
    out = cv2.filter2D(
        np.asarray(img, dtype=np.float32), -1, kernel, borderType=cv2.BORDER_REPLICATE
    )
    return _clamp(out)


def color_jitter(img: np.ndarray, hue_shift: float, saturation_factor: float) -> np.ndarray:
    """Shift hue (wrapping) and scale saturation in HSV space."""
    hsv = mcolors.rgb_to_hsv(np.asarray(img, dtype=np.float64))
    hsv[..., 0] = np.mod(hsv[..., 0] + hue_shift, 1.0)
    hsv[..., 1] = np.clip(hsv[..., 1] * saturation_factor, 0.0, 1.0)
    return _clamp(mcolors.hsv_to_rgb(hsv))


def brightness_contrast(
    img: np.ndarray, brightness_delta: float, contrast_factor: float
) -> np.ndarray:
    """out = clamp(contrast * (in - 0.5) + 0.5 + brightness)."""
    out = contrast_factor * (np.asarray(img, dtype=np.float32) - 0.5) + 0.5 + brightness_delta
    return _clamp(out)


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Video-luma grayscale replicated across the 3 channels."""
    img = np.asarray(img, dtype=np.float32)
    luma = (
        LUMA_WEIGHTS[0] * img[..., 0]
        + LUMA_WEIGHTS[1] * img[..., 1]
        + LUMA_WEIGHTS[2] * img[..., 2]
    )
    return _clamp(np.repeat(luma[..., None], 3, axis=2))


@dataclass(frozen=True)
class AffineSpec:
    """Flips plus quarter-turn rotation with optional small-angle jitter.

    Applied in fixed order: horizontal flip, vertical flip, quarter
    rotation, jitter rotation.
    """

    rotation: int = 0  # one of 0, 90, 180, 270
    jitter: float = 0.0  # degrees in [-15, 15]
    flip_h: bool = False
    flip_v: bool = False

    def validate(self) -> None:
        if self.rotation not in (0, 90, 180, 270):
            raise ValidationError(f"rotation must be a quarter turn, got {self.rotation}")
        if not -15.0 <= self.jitter <= 15.0:
            raise ValidationError(f"jitter {self.jitter} outside [-15, 15]")

    @property
    def is_identity(self) -> bool:
        return (
            self.rotation == 0
            and self.jitter == 0.0
            and not self.flip_h
            and not self.flip_v
        )


def _flip_points_h(pts: np.ndarray, w: float, h: float) -> np.ndarray:
    out = pts.copy()
    out[:, 0] = w - pts[:, 0]
    return out


def _flip_points_v(pts: np.ndarray, w: float, h: float) -> np.ndarray:
    out = pts.copy()
    out[:, 1] = h - pts[:, 1]
    return out


def _rot90_points(pts: np.ndarray, w: float, h: float) -> np.ndarray:
    # np.rot90 convention: (x, y) -> (y, w - x), output extent (h, w)
    out = np.empty_like(pts)
    out[:, 0] = pts[:, 1]
    out[:, 1] = w - pts[:, 0]
    return out


def _jitter_matrix(w: int, h: int, degrees: float) -> np.ndarray:
    # cv2 rotation about the continuous image center; cv2 centers live on
    # pixel centers, hence the half-pixel shift.
    return cv2.getRotationMatrix2D((w / 2.0 - 0.5, h / 2.0 - 0.5), degrees, 1.0)


def apply_affine(img: np.ndarray, spec: AffineSpec) -> np.ndarray:
    """Transform the image alone; flips and quarter turns are exact."""
    spec.validate()
    out = np.asarray(img, dtype=np.float32)
    if spec.flip_h:
        out = out[:, ::-1]
    if spec.flip_v:
        out = out[::-1, :]
    if spec.rotation:
        out = np.rot90(out, k=spec.rotation // 90)
    out = np.ascontiguousarray(out)
    if spec.jitter != 0.0:
        h, w = out.shape[:2]
        m = _jitter_matrix(w, h, spec.jitter)
        out = cv2.warpAffine(
            out, m, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE
        )
        out = _clamp(out)
    return out.copy()


def transform_boxes(
    boxes: list[BoundingBox], spec: AffineSpec, width: int, height: int
) -> tuple[list[BoundingBox | None], int, int]:
    """Map boxes through the image transform of ``apply_affine``.

    Returns one entry per input box (None when clipped away) plus the
    transformed image extent.
    """
    spec.validate()
    w, h = float(width), float(height)
    corners = [
        np.array(
            [[b.xmin, b.ymin], [b.xmax, b.ymin], [b.xmin, b.ymax], [b.xmax, b.ymax]],
            dtype=np.float64,
        )
        for b in boxes
    ]
    if spec.flip_h:
        corners = [_flip_points_h(c, w, h) for c in corners]
    if spec.flip_v:
        corners = [_flip_points_v(c, w, h) for c in corners]
    for _ in range(spec.rotation // 90):
        corners = [_rot90_points(c, w, h) for c in corners]
        w, h = h, w
    if spec.jitter != 0.0:
        m = _jitter_matrix(int(w), int(h), spec.jitter)
        rot = m[:, :2].T
        off = m[:, 2]
        # pad by the bilinear support radius so the warped mask stays inside
        corners = [(c - 0.5) @ rot + off + 0.5 for c in corners]
        corners = [
            np.concatenate([c - [1.0, 1.0], c + [1.0, 1.0]]) for c in corners
        ]
    out: list[BoundingBox | None] = []
    for c in corners:
        box = BoundingBox(
            float(c[:, 0].min()),
            float(c[:, 1].min()),
            float(c[:, 0].max()),
            float(c[:, 1].max()),
        )
        out.append(box.clipped(w, h))
    return out, int(w), int(h)


def affine_augment(
    img: np.ndarray, boxes: list[BoundingBox], spec: AffineSpec
) -> tuple[np.ndarray, list[BoundingBox]]:
    """Jointly transform an image and its boxes; clipped-away boxes are dropped."""
    h, w = np.asarray(img).shape[:2]
    out_img = apply_affine(img, spec)
    mapped, _, _ = transform_boxes(boxes, spec, w, h)
    return out_img, [b for b in mapped if b is not None]


def affine_augment_annotations(
    img: np.ndarray, annotations: list[Annotation], spec: AffineSpec
) -> tuple[np.ndarray, list[Annotation]]:
    """Like affine_augment but keeps each surviving box's class label."""
    h, w = np.asarray(img).shape[:2]
    out_img = apply_affine(img, spec)
    mapped, _, _ = transform_boxes([a.bbox for a in annotations], spec, w, h)
    kept = [
        Annotation(bbox=box, label=ann.label)
        for ann, box in zip(annotations, mapped)
        if box is not None
    ]
    return out_img, kept


def sample_affine(seed: int, jitter: bool = False) -> AffineSpec:
    """Uniform flips and quarter turns, with optional small-angle jitter."""
    rng = np.random.default_rng(seed)
    return AffineSpec(
        rotation=int(rng.integers(0, 4)) * 90,
        jitter=float(rng.uniform(-15.0, 15.0)) if jitter else 0.0,
        flip_h=bool(rng.integers(0, 2)),
        flip_v=bool(rng.integers(0, 2)),
    )


@dataclass(frozen=True)
class DegradationSpec:
    """One fully-parameterized degradation recipe."""

    blur_length: int
    blur_angle: float
    hue_shift: float
    saturation_factor: float
    brightness_delta: float
    contrast_factor: float
    seed: int = 0

    def validate(self) -> None:
        for name, (lo, hi) in SPEC_RANGES.items():
            value = getattr(self, name)
            if not lo <= value <= hi:
                raise ValidationError(f"{name}={value} outside [{lo}, {hi}]")

    @classmethod
    def identity(cls, seed: int = 0) -> "DegradationSpec":
        return cls(
            blur_length=1,
            blur_angle=0.0,
            hue_shift=0.0,
            saturation_factor=1.0,
            brightness_delta=0.0,
            contrast_factor=1.0,
            seed=seed,
        )


@dataclass(frozen=True)
class DegradationConfig:
    """Per-parameter [min, max] sampling ranges."""

    blur_length: tuple[int, int] = (3, 7)
    blur_angle: tuple[float, float] = (0.0, 180.0)
    hue_shift: tuple[float, float] = (-0.05, 0.05)
    saturation_factor: tuple[float, float] = (0.8, 1.25)
    brightness_delta: tuple[float, float] = (-0.15, 0.15)
    contrast_factor: tuple[float, float] = (0.8, 1.25)

    def validate(self) -> None:
        for name, (lo, hi) in SPEC_RANGES.items():
            a, b = getattr(self, name)
            if a > b:
                raise ValidationError(f"{name} range [{a}, {b}] is inverted")
            if a < lo or b > hi:
                raise ValidationError(
                    f"{name} range [{a}, {b}] outside declared [{lo}, {hi}]"
                )

    @classmethod
    def test_time(cls) -> "DegradationConfig":
        """Wider ranges for the low-quality test domain."""
        return cls(
            blur_length=(5, 11),
            blur_angle=(0.0, 180.0),
            hue_shift=(-0.1, 0.1),
            saturation_factor=(0.5, 1.5),
            brightness_delta=(-0.3, 0.3),
            contrast_factor=(0.5, 1.5),
        )

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2), encoding="utf-8")

    @classmethod
    def from_json(cls, path: str | Path) -> "DegradationConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f for f in SPEC_RANGES}
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown degradation parameters: {sorted(unknown)}")
        kwargs = {}
        for name, pair in raw.items():
            if len(pair) != 2:
                raise ValidationError(f"{name} must map to [min, max]")
            caster = int if name == "blur_length" else float
            kwargs[name] = (caster(pair[0]), caster(pair[1]))
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


def sample_spec(seed: int, config: DegradationConfig | None = None) -> DegradationSpec:
    """Draw each parameter uniformly from its configured range."""
    config = config or DegradationConfig()
    config.validate()
    rng = np.random.default_rng(seed)
    lo, hi = config.blur_length
    spec = DegradationSpec(
        blur_length=int(rng.integers(lo, hi + 1)),
        blur_angle=float(rng.uniform(*config.blur_angle)),
        hue_shift=float(rng.uniform(*config.hue_shift)),
        saturation_factor=float(rng.uniform(*config.saturation_factor)),
        brightness_delta=float(rng.uniform(*config.brightness_delta)),
        contrast_factor=float(rng.uniform(*config.contrast_factor)),
        seed=seed,
    )
    spec.validate()
    return spec


def apply_spec(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Fixed composition: color jitter, then brightness/contrast, then blur."""
    spec.validate()
    img = check_image(img)
    out = color_jitter(img, spec.hue_shift, spec.saturation_factor)
    out = brightness_contrast(out, spec.brightness_delta, spec.contrast_factor)
    out = motion_blur(out, spec.blur_length, spec.blur_angle)
    return out


def degrade_with_seed(
    img: np.ndarray, seed: int, config: DegradationConfig | None = None
) -> np.ndarray:
    return apply_spec(img, sample_spec(seed, config))


def make_paired_sample(
    img: np.ndarray,
    seed: int,
    config: DegradationConfig | None = None,
    augment: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """(degraded, clean) training pair; both sides stay pixel-aligned.

    With augment=True the same affine transform is applied to both sides
    before degradation, so alignment is preserved; otherwise the clean half
    is the input itself.
    """
    clean = check_image(img)
    if augment:
        from .seeding import derive_seed

        clean = apply_affine(clean, sample_affine(derive_seed(seed, "affine"), jitter=False))
    degraded = degrade_with_seed(clean, seed, config)
    return degraded, clean
