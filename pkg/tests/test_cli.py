"""End-to-end tests for the command line interface."""

import json

import pytest

from eggdetect.cli import main
from eggdetect.dataset import load_folds, load_manifest
from eggdetect.types import CLASS_ORDER


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run every verb once over a small corpus and collect the artifacts."""
    root = tmp_path_factory.mktemp("cli")
    paths = {
        "corpus": root / "corpus",
        "folds": root / "folds.json",
        "degraded": root / "degraded",
        "enhancer": root / "enhancer.pt",
        "enhanced": root / "enhanced",
        "detector": root / "detector.pt",
        "detections": root / "detections.json",
        "report": root / "report.json",
    }
    manifest = paths["corpus"] / "manifest.json"
    steps = [
        ["toy-corpus", "--out", str(paths["corpus"]), "--count", "20", "--seed", "3"],
        ["split", "--manifest", str(manifest), "--k", "2", "--seed", "1",
         "--out", str(paths["folds"])],
        ["degrade", "--manifest", str(manifest), "--seed", "4",
         "--out", str(paths["degraded"])],
        ["train-enhancer", "--manifest", str(manifest), "--epochs", "1", "--seed", "5",
         "--out", str(paths["enhancer"])],
        ["enhance", "--model", str(paths["enhancer"]), "--out", str(paths["enhanced"]),
         str(paths["degraded"] / "manifest.json")],
        ["train-detector", "--manifest", str(manifest), "--epochs", "2", "--seed", "6",
         "--out", str(paths["detector"])],
        ["detect", "--model", str(paths["detector"]), "--score-threshold", "0.2",
         "--out", str(paths["detections"]), str(manifest)],
        ["evaluate", "--detections", str(paths["detections"]), "--manifest", str(manifest),
         "--out", str(paths["report"])],
    ]
    for argv in steps:
        assert main(argv) == 0, f"step failed: {argv[0]}"
    paths["manifest"] = manifest
    return paths


class TestPipeline:
    def test_corpus_written(self, pipeline):
        manifest = load_manifest(pipeline["manifest"])
        assert len(manifest.records) == 20

    def test_folds_partition_ids(self, pipeline):
        folds = load_folds(pipeline["folds"])
        manifest = load_manifest(pipeline["manifest"])
        train, test = folds.split(0)
        assert train | test == {rec.id for rec in manifest.records}
        assert not train & test

    def test_degraded_corpus_complete(self, pipeline):
        degraded = load_manifest(pipeline["degraded"] / "manifest.json")
        assert len(degraded.records) == 20
        pairs = json.loads((pipeline["degraded"] / "pairs.json").read_text())
        assert set(pairs) == {rec.id for rec in degraded.records}
        for entry in pairs.values():
            assert set(entry) == {"clean", "degraded"}

    def test_degraded_annotations_preserved(self, pipeline):
        clean = load_manifest(pipeline["manifest"])
        degraded = load_manifest(pipeline["degraded"] / "manifest.json")
        by_id = {rec.id: rec for rec in degraded.records}
        for rec in clean.records:
            assert by_id[rec.id].annotations == rec.annotations

    def test_enhanced_images_written(self, pipeline):
        outputs = sorted(pipeline["enhanced"].glob("*.png"))
        assert len(outputs) == 20

    def test_detections_schema(self, pipeline):
        entries = json.loads(pipeline["detections"].read_text())
        assert isinstance(entries, list)
        valid_labels = {label.value for label in CLASS_ORDER}
        ids = {rec.id for rec in load_manifest(pipeline["manifest"]).records}
        for entry in entries:
            assert set(entry) == {"image_id", "label", "bbox", "score"}
            assert entry["image_id"] in ids
            assert entry["label"] in valid_labels
            assert len(entry["bbox"]) == 4
            assert 0.0 <= entry["score"] <= 1.0

    def test_report_written_and_printed(self, pipeline, capsys):
        saved = json.loads(pipeline["report"].read_text())
        assert set(saved) >= {"precision", "recall", "all_precision", "all_recall", "counts"}
        assert main(["evaluate", "--detections", str(pipeline["detections"]),
                     "--manifest", str(pipeline["manifest"])]) == 0
        printed = json.loads(capsys.readouterr().out)
        assert printed == saved

    def test_model_info(self, pipeline, capsys):
        assert main(["model-info", "--model", str(pipeline["detector"])]) == 0
        info = json.loads(capsys.readouterr().out)
        assert info["format"] == "eggdetect-detector"
        assert info["config"]["backbone"] == "toy"
        assert info["training_meta"]["epochs"] == 2

    def test_degrade_is_deterministic(self, pipeline, tmp_path):
        assert main(["degrade", "--manifest", str(pipeline["manifest"]), "--seed", "4",
                     "--out", str(tmp_path / "again")]) == 0
        sample = sorted((pipeline["degraded"] / "images").glob("*.png"))[0]
        again = tmp_path / "again" / "images" / sample.name
        assert again.read_bytes() == sample.read_bytes()

    def test_unpaired_training(self, pipeline, tmp_path):
        out = tmp_path / "unpaired.pt"
        assert main(["train-enhancer", "--manifest", str(pipeline["manifest"]),
                     "--mode", "unpaired", "--epochs", "1", "--seed", "5",
                     "--out", str(out)]) == 0
        assert out.is_file()

    def test_run_matrix_prints_table(self, pipeline, tmp_path, capsys):
        config = tmp_path / "exp.json"
        config.write_text(json.dumps({
            "manifest": str(pipeline["manifest"]),
            "output_dir": str(tmp_path / "out"),
            "settings": [["original", "original"]],
            "detector": {"epochs": 2},
            "enhancer": {"epochs": 1, "unpaired_epochs": 1},
        }), encoding="utf-8")
        assert main(["run-matrix", "--config", str(config)]) == 0
        out = capsys.readouterr().out
        assert "| Setting | Precision |" in out
        assert "| Original / Original |" in out
        assert (tmp_path / "out" / "results.csv").is_file()


class TestFailureModes:
    def test_missing_model_is_exit_1(self, pipeline, tmp_path, capsys):
        code = main(["detect", "--model", str(tmp_path / "ghost.pt"),
                     "--out", str(tmp_path / "d.json"), str(pipeline["manifest"])])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_wrong_checkpoint_kind_is_exit_1(self, pipeline, tmp_path):
        code = main(["enhance", "--model", str(pipeline["detector"]),
                     "--out", str(tmp_path / "e"), str(pipeline["manifest"])])
        assert code == 1

    def test_unknown_verb_exits_1(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 1

    def test_missing_required_argument_exits_1(self):
        with pytest.raises(SystemExit) as exc:
            main(["detect"])
        assert exc.value.code == 1

    def test_malformed_detections_is_exit_1(self, pipeline, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps([{"image_id": "x", "label": "AL"}]), encoding="utf-8")
        code = main(["evaluate", "--detections", str(bad),
                     "--manifest", str(pipeline["manifest"])])
        assert code == 1
        assert "malformed" in capsys.readouterr().err

    def test_unknown_detection_ids_is_exit_1(self, pipeline, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps([{
            "image_id": "ghost", "label": "AL", "bbox": [0, 0, 5, 5], "score": 0.9,
        }]), encoding="utf-8")
        code = main(["evaluate", "--detections", str(bad),
                     "--manifest", str(pipeline["manifest"])])
        assert code == 1
        assert "unknown image ids" in capsys.readouterr().err

    def test_unexpected_error_is_exit_2(self, pipeline, tmp_path, capsys, monkeypatch):
        import eggdetect.cli as cli_module

        def boom(path):
            raise RuntimeError("device exploded")

        monkeypatch.setattr(cli_module, "load_detector", boom)
        code = main(["detect", "--model", str(pipeline["detector"]),
                     "--out", str(tmp_path / "d.json"), str(pipeline["manifest"])])
        assert code == 2
        assert "device exploded" in capsys.readouterr().err
