from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from eggdetect.degrade import (
    AffineSpec,
    DegradationConfig,
    DegradationSpec,
    affine_augment,
    affine_augment_annotations,
    apply_affine,
    apply_spec,
    brightness_contrast,
    check_image,
    color_jitter,
    degrade_with_seed,
    make_paired_sample,
    motion_blur,
    sample_affine,
    sample_spec,
    to_grayscale,
)
from eggdetect.seeding import derive_seed
from eggdetect.types import Annotation, BoundingBox, ClassLabel, ValidationError


@pytest.fixture
def photo():
    rng = np.random.default_rng(42)
    base = rng.random((48, 64, 3)).astype(np.float32)
    # smooth it a little so blur effects are visible but not dominated by noise
    return (base + np.roll(base, 1, axis=0) + np.roll(base, 1, axis=1)) / 3.0


class TestMotionBlur:
    def test_length_one_identity(self, photo):
        for angle in (0.0, 37.0, 90.0, 179.0):
            assert np.array_equal(motion_blur(photo, 1, angle), photo)

    def test_constant_image_unchanged(self):
        img = np.full((20, 20, 3), 0.6, dtype=np.float32)
        out = motion_blur(img, 7, 45.0)
        np.testing.assert_allclose(out, img, atol=1e-6)

    def test_impulse_horizontal(self):
        img = np.zeros((9, 9, 3), dtype=np.float32)
        img[4, 4] = 1.0
        out = motion_blur(img, 3, 0.0)
        # hand convolution: 3-tap normalized kernel spreads 1/3 to x in {3,4,5}
        np.testing.assert_allclose(out[4, 3:6, 0], [1 / 3] * 3, atol=1e-6)
        assert out[3].sum() == 0 and out[5].sum() == 0

    def test_impulse_vertical(self):
        img = np.zeros((9, 9, 3), dtype=np.float32)
        img[4, 4] = 1.0
        out = motion_blur(img, 3, 90.0)
        np.testing.assert_allclose(out[3:6, 4, 0], [1 / 3] * 3, atol=1e-6)

    def test_range_closure(self, photo):
        rng = np.random.default_rng(0)
        for _ in range(10):
            out = motion_blur(photo, int(rng.integers(1, 15)), float(rng.uniform(0, 180)))
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_invalid_length(self, photo):
        with pytest.raises(ValidationError):
            motion_blur(photo, 0, 0.0)


class TestColorJitter:
    def test_identity_parameters(self, photo):
        out = color_jitter(photo, 0.0, 1.0)
        np.testing.assert_allclose(out, photo, atol=1e-6)

    def test_zero_saturation_is_gray(self, photo):
        out = color_jitter(photo, 0.0, 0.0)
        np.testing.assert_allclose(out[..., 0], out[..., 1], atol=1e-6)
        np.testing.assert_allclose(out[..., 1], out[..., 2], atol=1e-6)

    def test_hue_third_turns_red_green(self):
        red = np.zeros((2, 2, 3), dtype=np.float32)
        red[..., 0] = 1.0
        out = color_jitter(red, 1 / 3, 1.0)
        expected = np.zeros_like(red)
        expected[..., 1] = 1.0
        np.testing.assert_allclose(out, expected, atol=1e-6)

    def test_hue_wraps(self, photo):
        np.testing.assert_allclose(
            color_jitter(photo, 0.4, 1.0), color_jitter(photo, 0.4 - 1.0, 1.0), atol=1e-6
        )


class TestBrightnessContrast:
    def test_identity(self, photo):
        np.testing.assert_allclose(brightness_contrast(photo, 0.0, 1.0), photo, atol=1e-7)

    def test_full_brightness_saturates(self, photo):
        out = brightness_contrast(photo, 1.0, 1.0)
        assert np.all(out == 1.0)

    def test_midgray_fixed_point(self):
        img = np.full((4, 4, 3), 0.5, dtype=np.float32)
        out = brightness_contrast(img, 0.0, 2.0)
        np.testing.assert_allclose(out, img, atol=1e-7)

    def test_contrast_spreads_around_pivot(self):
        img = np.array([[[0.4, 0.5, 0.6]]], dtype=np.float32)
        out = brightness_contrast(img, 0.0, 2.0)
        np.testing.assert_allclose(out[0, 0], [0.3, 0.5, 0.7], atol=1e-6)


class TestGrayscale:
    def test_neutral_pixel_unchanged(self):
        img = np.full((3, 3, 3), 0.77, dtype=np.float32)
        np.testing.assert_allclose(to_grayscale(img), img, atol=1e-6)

    def test_pure_red_luma(self):
        img = np.zeros((2, 2, 3), dtype=np.float32)
        img[..., 0] = 1.0
        np.testing.assert_allclose(to_grayscale(img), 0.299, atol=1e-6)

    def test_channels_equal(self, photo):
        out = to_grayscale(photo)
        assert np.array_equal(out[..., 0], out[..., 1])
        assert np.array_equal(out[..., 1], out[..., 2])


def mask_box(img):
    mask = img[..., 0] > 0.5
    ys, xs = np.nonzero(mask)
    return BoundingBox(float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))


class TestAffine:
    def test_identity_spec(self, photo):
        boxes = [BoundingBox(2, 3, 11, 13)]
        out, out_boxes = affine_augment(photo, boxes, AffineSpec())
        assert np.array_equal(out, photo)
        assert out_boxes == boxes

    def test_flip_h_box(self):
        img = np.zeros((50, 100, 3), dtype=np.float32)
        _, boxes = affine_augment(img, [BoundingBox(0, 0, 10, 10)], AffineSpec(flip_h=True))
        assert boxes == [BoundingBox(90, 0, 100, 10)]

    def test_quarter_turns_compose_to_identity(self):
        box = BoundingBox(3, 7, 20, 15)
        img = np.zeros((40, 60, 3), dtype=np.float32)
        out_img, boxes = affine_augment(img, [box], AffineSpec(rotation=90))
        out_img, boxes = affine_augment(out_img, boxes, AffineSpec(rotation=90))
        out_img, boxes = affine_augment(out_img, boxes, AffineSpec(rotation=180))
        assert out_img.shape == img.shape
        assert boxes == [box]

    def test_exact_box_transform_for_flips_and_quarters(self):
        rng = np.random.default_rng(31)
        for _ in range(100):
            h = int(rng.integers(16, 48))
            w = int(rng.integers(16, 48))
            x0 = int(rng.integers(0, w - 4))
            y0 = int(rng.integers(0, h - 4))
            x1 = int(rng.integers(x0 + 2, w))
            y1 = int(rng.integers(y0 + 2, h))
            img = np.zeros((h, w, 3), dtype=np.float32)
            img[y0:y1, x0:x1] = 1.0
            spec = AffineSpec(
                rotation=int(rng.integers(0, 4)) * 90,
                flip_h=bool(rng.integers(0, 2)),
                flip_v=bool(rng.integers(0, 2)),
            )
            out, boxes = affine_augment(img, [BoundingBox(x0, y0, x1, y1)], spec)
            assert boxes[0] == mask_box(out)

    def test_jitter_box_contains_mask(self):
        rng = np.random.default_rng(33)
        for _ in range(100):
            x0 = int(rng.integers(8, 40))
            y0 = int(rng.integers(8, 40))
            x1 = int(rng.integers(x0 + 3, 56))
            y1 = int(rng.integers(y0 + 3, 56))
            img = np.zeros((64, 64, 3), dtype=np.float32)
            img[y0:y1, x0:x1] = 1.0
            spec = AffineSpec(jitter=float(rng.uniform(-15, 15)))
            out, boxes = affine_augment(img, [BoundingBox(x0, y0, x1, y1)], spec)
            mb = mask_box(out)
            tb = boxes[0]
            assert tb.xmin <= mb.xmin and tb.ymin <= mb.ymin
            assert tb.xmax >= mb.xmax and tb.ymax >= mb.ymax

    def test_box_fully_outside_dropped(self):
        # after a 15-degree rotation the corner sliver leaves the canvas
        img = np.zeros((100, 100, 3), dtype=np.float32)
        spec = AffineSpec(jitter=15.0)
        _, boxes = affine_augment(img, [BoundingBox(97, 0, 100, 2)], spec)
        corner_gone = boxes == []
        clipped_ok = boxes and boxes[0].clipped(100, 100) is not None
        assert corner_gone or clipped_ok

    def test_labels_follow_boxes(self):
        img = np.zeros((50, 50, 3), dtype=np.float32)
        anns = [
            Annotation(BoundingBox(1, 1, 10, 10), ClassLabel.AL),
            Annotation(BoundingBox(30, 30, 45, 45), ClassLabel.TS),
        ]
        out, kept = affine_augment_annotations(img, anns, AffineSpec(flip_h=True))
        assert [a.label for a in kept] == [ClassLabel.AL, ClassLabel.TS]
        assert kept[0].bbox == BoundingBox(40, 1, 49, 10)

    def test_rejects_bad_rotation(self, photo):
        with pytest.raises(ValidationError):
            apply_affine(photo, AffineSpec(rotation=45))


class TestSampling:
    def test_same_seed_same_spec(self):
        cfg = DegradationConfig()
        assert sample_spec(99, cfg) == sample_spec(99, cfg)

    def test_degenerate_ranges(self):
        cfg = DegradationConfig(
            blur_length=(5, 5),
            blur_angle=(30.0, 30.0),
            hue_shift=(0.02, 0.02),
            saturation_factor=(1.1, 1.1),
            brightness_delta=(-0.1, -0.1),
            contrast_factor=(0.9, 0.9),
        )
        spec = sample_spec(0, cfg)
        assert spec.blur_length == 5
        assert spec.blur_angle == 30.0
        assert spec.hue_shift == 0.02
        assert spec.saturation_factor == 1.1
        assert spec.brightness_delta == -0.1
        assert spec.contrast_factor == 0.9

    def test_uniform_means(self):
        cfg = DegradationConfig()
        n = 10_000
        draws = [sample_spec(derive_seed(1234, i), cfg) for i in range(n)]
        for name in (
            "blur_angle",
            "hue_shift",
            "saturation_factor",
            "brightness_delta",
            "contrast_factor",
        ):
            lo, hi = getattr(cfg, name)
            values = np.array([getattr(s, name) for s in draws])
            se = (hi - lo) / np.sqrt(12 * n)
            assert abs(values.mean() - (lo + hi) / 2) < 3 * se, name
        lo, hi = cfg.blur_length
        lengths = np.array([s.blur_length for s in draws])
        width = hi - lo + 1
        se = np.sqrt((width**2 - 1) / 12 / n)
        assert abs(lengths.mean() - (lo + hi) / 2) < 3 * se
        assert lengths.min() == lo and lengths.max() == hi

    def test_out_of_range_config_rejected(self):
        with pytest.raises(ValidationError):
            DegradationConfig(hue_shift=(-0.5, 0.5)).validate()

    def test_affine_sampler_deterministic(self):
        assert sample_affine(5, jitter=True) == sample_affine(5, jitter=True)


class TestApplySpec:
    def test_identity_spec(self, photo):
        out = apply_spec(photo, DegradationSpec.identity())
        np.testing.assert_allclose(out, photo, atol=1e-6)

    def test_purity(self, photo):
        spec = sample_spec(7)
        a = apply_spec(photo, spec)
        b = apply_spec(photo, spec)
        assert np.array_equal(a, b)

    def test_range_closure(self, photo):
        for i in range(10):
            out = apply_spec(photo, sample_spec(i, DegradationConfig.test_time()))
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_invalid_spec_rejected(self, photo):
        bad = DegradationSpec(
            blur_length=3,
            blur_angle=0.0,
            hue_shift=0.9,
            saturation_factor=1.0,
            brightness_delta=0.0,
            contrast_factor=1.0,
        )
        with pytest.raises(ValidationError):
            apply_spec(photo, bad)


class TestPairedSamples:
    def test_pair_dimensions_and_clean_identity(self, photo):
        degraded, clean = make_paired_sample(photo, 11)
        assert degraded.shape == clean.shape == photo.shape
        assert np.array_equal(clean, photo)

    def test_degradation_changes_image(self, photo):
        degraded, clean = make_paired_sample(photo, 11)
        assert np.abs(degraded - clean).mean() > 0

    def test_augmented_pair_stays_aligned(self, photo):
        degraded, clean = make_paired_sample(photo, 13, augment=True)
        assert degraded.shape == clean.shape
        # the clean half is the affine-transformed input
        spec = sample_affine(derive_seed(13, "affine"), jitter=False)
        assert np.array_equal(clean, apply_affine(photo, spec))

    def test_deterministic(self, photo):
        a = make_paired_sample(photo, 17)
        b = make_paired_sample(photo, 17)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


class TestCorpusDeterminism:
    def test_parallel_equals_serial(self):
        rng = np.random.default_rng(3)
        images = {f"img_{i}": rng.random((24, 24, 3)).astype(np.float32) for i in range(16)}
        cfg = DegradationConfig.test_time()
        root = 2024

        def degrade_one(item):
            name, img = item
            return name, degrade_with_seed(img, derive_seed(root, "degrade", name), cfg)

        serial = dict(map(degrade_one, images.items()))
        with ThreadPoolExecutor(max_workers=4) as pool:
            parallel = dict(pool.map(degrade_one, reversed(list(images.items()))))
        assert serial.keys() == parallel.keys()
        for name in images:
            assert serial[name].tobytes() == parallel[name].tobytes()


class TestCheckImage:
    def test_rejects_bad_shapes(self):
        with pytest.raises(ValidationError):
            check_image(np.zeros((5, 5)))
        with pytest.raises(ValidationError):
            check_image(np.zeros((5, 5, 4)))

    def test_rejects_out_of_range(self):
        with pytest.raises(ValidationError):
            check_image(np.full((2, 2, 3), 1.5))

    def test_converts_to_float32(self):
        out = check_image(np.zeros((2, 2, 3), dtype=np.float64))
        assert out.dtype == np.float32
