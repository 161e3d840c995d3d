import json

import numpy as np
import pytest

from eggdetect.dataset import (
    DatasetError,
    DatasetManifest,
    class_histogram,
    load_folds,
    load_manifest,
    manifest_from_dict,
    save_folds,
    save_manifest,
    stratified_kfold,
)
from eggdetect.types import ClassLabel, CLASS_ORDER

# per-class image counts of the full corpus
PAPER_COUNTS = {"AL": 558, "HW": 550, "OV": 549, "TS": 551, "Tri": 699}


def image_entry(rec_id, label=None, width=100, height=80, boxes=None, device=None):
    annotations = []
    if label is not None and boxes is None:
        boxes = [[10, 10, 40, 40]]
    for b in boxes or []:
        annotations.append({"label": label, "bbox": b})
    return {
        "id": rec_id,
        "path": f"images/{rec_id}.png",
        "width": width,
        "height": height,
        "device": device,
        "annotations": annotations,
    }


def corpus_dict(counts):
    images = []
    for label, n in counts.items():
        for i in range(n):
            images.append(image_entry(f"{label}_{i:04d}", label))
    return {"images": images}


@pytest.fixture(scope="module")
def paper_manifest():
    return manifest_from_dict(corpus_dict(PAPER_COUNTS))


class TestLoadManifest:
    def test_paper_scale_counts(self, paper_manifest):
        assert len(paper_manifest) == 2907
        for label in CLASS_ORDER:
            assert paper_manifest.class_counts[label] == PAPER_COUNTS[label.value]

    def test_empty_manifest(self):
        manifest = manifest_from_dict({"images": []})
        assert len(manifest) == 0
        assert all(manifest.class_counts[label] == 0 for label in CLASS_ORDER)

    def test_degenerate_box_rejected_with_record_id(self):
        entry = image_entry("bad_rec", "AL", boxes=[[10, 10, 10, 40]])
        with pytest.raises(DatasetError, match="bad_rec"):
            manifest_from_dict({"images": [entry]})

    def test_out_of_bounds_box_rejected(self):
        entry = image_entry("oob", "AL", width=30, boxes=[[10, 10, 40, 20]])
        with pytest.raises(DatasetError, match="oob"):
            manifest_from_dict({"images": [entry]})

    def test_unknown_label_rejected(self):
        entry = image_entry("rec1", "XX")
        with pytest.raises(DatasetError, match="XX"):
            manifest_from_dict({"images": [entry]})

    def test_duplicate_id_rejected(self):
        entries = [image_entry("dup", "AL"), image_entry("dup", "HW")]
        with pytest.raises(DatasetError, match="dup"):
            manifest_from_dict({"images": entries})

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(DatasetError, match="JSON"):
            load_manifest(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetError):
            load_manifest(tmp_path / "nope.json")

    def test_roundtrip(self, tmp_path):
        manifest = manifest_from_dict(
            {
                "images": [
                    image_entry("a", "AL", device="microscope_1"),
                    image_entry("b", "Tri", boxes=[[0, 0, 5.5, 7.25], [20, 20, 30, 30]]),
                    image_entry("c"),
                ]
            }
        )
        path = tmp_path / "manifest.json"
        save_manifest(manifest, path)
        assert load_manifest(path) == manifest


class TestClassHistogram:
    def test_counts_annotations_not_images(self):
        entry = image_entry("two_eggs", "AL", boxes=[[0, 0, 10, 10], [20, 20, 30, 30]])
        manifest = manifest_from_dict({"images": [entry]})
        hist = class_histogram(manifest)
        assert hist[ClassLabel.AL] == 2
        assert sum(hist.values()) == 2

    def test_matches_brute_force_recount(self):
        rng = np.random.default_rng(17)
        images = []
        expected = {label: 0 for label in CLASS_ORDER}
        for i in range(120):
            n_boxes = int(rng.integers(0, 4))
            boxes, labels = [], []
            for j in range(n_boxes):
                label = CLASS_ORDER[rng.integers(0, 5)]
                expected[label] += 1
                labels.append(label)
                boxes.append([j * 10, 0, j * 10 + 5, 5])
            entry = image_entry(f"r{i}")
            entry["annotations"] = [
                {"label": lab.value, "bbox": b} for lab, b in zip(labels, boxes)
            ]
            images.append(entry)
        manifest = manifest_from_dict({"images": images})
        assert class_histogram(manifest) == expected
        assert manifest.class_counts == expected


class TestStratifiedKFold:
    def test_exact_division(self):
        manifest = manifest_from_dict(
            {"images": [image_entry(f"al{i}", "AL") for i in range(10)]}
        )
        folds = stratified_kfold(manifest, k=5, seed=0)
        sizes = [len(folds.fold_ids(i)) for i in range(5)]
        assert sizes == [2, 2, 2, 2, 2]

    def test_paper_counts_balance(self, paper_manifest):
        folds = stratified_kfold(paper_manifest, k=5, seed=123)
        # exact partition
        assert len(folds.assignment) == 2907
        assert set(folds.assignment.values()) == set(range(5))
        sizes = [len(folds.fold_ids(i)) for i in range(5)]
        assert sum(sizes) == 2907
        for size in sizes:
            assert 581 - 5 <= size <= 582 + 5
        # per-class imbalance <= 1
        for label in CLASS_ORDER:
            per_fold = [0] * 5
            for rec in paper_manifest.records:
                if rec.majority_label() == label:
                    per_fold[folds.assignment[rec.id]] += 1
            assert max(per_fold) - min(per_fold) <= 1
            assert sum(per_fold) == PAPER_COUNTS[label.value]

    def test_deterministic_under_seed(self, paper_manifest):
        a = stratified_kfold(paper_manifest, k=5, seed=7)
        b = stratified_kfold(paper_manifest, k=5, seed=7)
        assert a == b
        c = stratified_kfold(paper_manifest, k=5, seed=8)
        assert a != c

    def test_independent_of_record_order(self):
        images = [image_entry(f"x{i}", CLASS_ORDER[i % 5].value) for i in range(50)]
        forward = manifest_from_dict({"images": images})
        backward = manifest_from_dict({"images": images[::-1]})
        assert (
            stratified_kfold(forward, 5, seed=3).assignment
            == stratified_kfold(backward, 5, seed=3).assignment
        )

    def test_class_smaller_than_k_rejected(self):
        images = [image_entry(f"al{i}", "AL") for i in range(10)]
        images.append(image_entry("lonely_hw", "HW"))
        manifest = manifest_from_dict({"images": images})
        with pytest.raises(DatasetError, match="HW"):
            stratified_kfold(manifest, k=5, seed=0)

    def test_k_too_small_rejected(self):
        manifest = manifest_from_dict({"images": [image_entry("a", "AL")]})
        with pytest.raises(DatasetError):
            stratified_kfold(manifest, k=1, seed=0)

    def test_split_is_disjoint_and_covering(self):
        images = [image_entry(f"x{i}", CLASS_ORDER[i % 5].value) for i in range(40)]
        manifest = manifest_from_dict({"images": images})
        folds = stratified_kfold(manifest, 4, seed=5)
        all_ids = {rec.id for rec in manifest.records}
        for f in range(4):
            train, test = folds.split(f)
            assert train | test == all_ids
            assert not train & test

    def test_fold_file_roundtrip(self, tmp_path):
        images = [image_entry(f"x{i}", CLASS_ORDER[i % 5].value) for i in range(25)]
        manifest = manifest_from_dict({"images": images})
        folds = stratified_kfold(manifest, 5, seed=9)
        path = tmp_path / "folds.json"
        save_folds(folds, path)
        loaded = load_folds(path)
        assert loaded == folds
        raw = json.loads(path.read_text())
        assert set(raw) == {"k", "seed", "assignment"}


class TestRecordHelpers:
    def test_majority_label_tie_break(self):
        entry = image_entry(
            "tie", None, boxes=None
        )
        entry["annotations"] = [
            {"label": "HW", "bbox": [0, 0, 5, 5]},
            {"label": "AL", "bbox": [10, 10, 15, 15]},
        ]
        manifest = manifest_from_dict({"images": [entry]})
        # tie resolves in declaration order: AL before HW
        assert manifest.records[0].majority_label() == ClassLabel.AL

    def test_no_annotations(self):
        manifest = manifest_from_dict({"images": [image_entry("bg")]})
        assert manifest.records[0].majority_label() is None

    def test_subset(self):
        manifest = manifest_from_dict(
            {"images": [image_entry("a", "AL"), image_entry("b", "HW")]}
        )
        sub = manifest.subset({"b"})
        assert [r.id for r in sub.records] == ["b"]
