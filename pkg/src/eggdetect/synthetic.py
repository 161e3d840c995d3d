"""Rendered toy corpus for fast end-to-end runs.

Each image holds one or more filled ellipses on a dim textured
background. The five classes differ in hue, elongation, and size, so a
small detector can separate them, and every box is derived from the
rendered mask rather than the sampled ellipse parameters, so the ground
truth is tight by construction.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np
from matplotlib.colors import hsv_to_rgb
from PIL import Image

from .dataset import DatasetManifest, ImageRecord, save_manifest
from .seeding import rng_for
from .types import Annotation, BoundingBox, ClassLabel, CLASS_ORDER, ValidationError

# hue, aspect (width over height), semi-minor axis as a fraction of image size
CLASS_STYLES = {
    ClassLabel.AL: (0.02, 1.00, 0.16),
    ClassLabel.HW: (0.12, 1.90, 0.12),
    ClassLabel.OV: (0.33, 1.45, 0.15),
    ClassLabel.TS: (0.58, 0.65, 0.15),
    ClassLabel.Tri: (0.83, 1.15, 0.20),
}


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    cells = max(size // 8, 2)
    base = rng.random((cells, cells, 3)).astype(np.float32)
    smooth = cv2.resize(base, (size, size), interpolation=cv2.INTER_CUBIC)
    return np.clip(0.25 + 0.25 * smooth, 0.0, 1.0)


def _render_egg(
    img: np.ndarray, rng: np.random.Generator, label: ClassLabel, size: int
) -> BoundingBox:
    hue, aspect, scale = CLASS_STYLES[label]
    b = scale * size * rng.uniform(0.85, 1.15)
    a = b * aspect
    reach = int(np.ceil(max(a, b))) + 2
    if 2 * reach >= size:
        raise ValidationError(f"image size {size} too small for class {label.value}")
    cx = int(rng.integers(reach, size - reach + 1))
    cy = int(rng.integers(reach, size - reach + 1))
    angle = float(rng.uniform(0.0, 180.0))

    mask = np.zeros((size, size), dtype=np.uint8)
    cv2.ellipse(mask, (cx, cy), (int(round(a)), int(round(b))), angle, 0, 360, 255, -1)
    color = hsv_to_rgb(
        [(hue + rng.uniform(-0.02, 0.02)) % 1.0, rng.uniform(0.55, 0.8), rng.uniform(0.7, 0.9)]
    ).astype(np.float32)
    texture = cv2.resize(
        rng.random((size // 8, size // 8)).astype(np.float32),
        (size, size),
        interpolation=cv2.INTER_CUBIC,
    )
    shading = (0.85 + 0.3 * texture)[:, :, None]
    inside = mask > 0
    img[inside] = np.clip(color[None, :] * shading[inside], 0.0, 1.0)

    ys, xs = np.nonzero(mask)
    return BoundingBox(float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))


def render_toy_image(
    seed: int, index: int, size: int = 64, min_eggs: int = 1, max_eggs: int = 1
) -> tuple[np.ndarray, list[Annotation]]:
    """Render one image; deterministic in (seed, index) alone."""
    if size < 16:
        raise ValidationError("size must be >= 16")
    if not 1 <= min_eggs <= max_eggs:
        raise ValidationError("need 1 <= min_eggs <= max_eggs")
    rng = rng_for(seed, "toy", index)
    img = _background(rng, size)
    label = CLASS_ORDER[index % len(CLASS_ORDER)]
    count = int(rng.integers(min_eggs, max_eggs + 1))
    annotations = []
    for _ in range(count):
        bbox = _render_egg(img, rng, label, size)
        annotations.append(Annotation(bbox=bbox, label=label))
    return img.astype(np.float32), annotations


def make_toy_corpus(
    out_dir: str | Path,
    n_images: int,
    seed: int = 0,
    size: int = 64,
    min_eggs: int = 1,
    max_eggs: int = 1,
) -> Path:
    """Write PNGs plus a manifest under out_dir; returns the manifest path."""
    if n_images < 1:
        raise ValidationError("n_images must be >= 1")
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for index in range(n_images):
        img, annotations = render_toy_image(seed, index, size, min_eggs, max_eggs)
        name = f"toy_{index:05d}"
        rel_path = f"images/{name}.png"
        data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(data).save(image_dir / f"{name}.png")
        records.append(
            ImageRecord(
                id=name,
                path=rel_path,
                width=size,
                height=size,
                annotations=tuple(annotations),
                device_tag="camera-a" if index % 2 == 0 else "camera-b",
            )
        )
    manifest_path = out_dir / "manifest.json"
    save_manifest(DatasetManifest(tuple(records)), manifest_path)
    return manifest_path
