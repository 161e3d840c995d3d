"""Command-line interface.

Verbs mirror the pipeline stages: degrade a corpus, train and apply
enhancers, train detectors, detect, evaluate against ground truth,
split folds, run the full experiment matrix, and inspect checkpoints.
Exit codes: 0 success, 1 invalid input or config, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoints import CheckpointError, read_info
from .dataset import (
    DatasetError,
    DatasetManifest,
    ImageRecord,
    load_manifest,
    save_folds,
    save_manifest,
    stratified_kfold,
)
from .degrade import DegradationConfig, degrade_with_seed
from .detect import (
    DetectorConfig,
    build_detector,
    infer,
    load_detector,
    save_detector,
    train_detector,
)
from .enhance import (
    GeneratorConfig,
    build_enhancer,
    enhance,
    load_enhancer,
    save_enhancer,
    train_paired,
    train_unpaired,
)
from .experiments import (
    PROFILES,
    ExperimentRunner,
    load_image,
    parse_config,
)
from .postprocess import match_detections, nms, precision_recall
from .seeding import derive_seed
from .types import BoundingBox, ClassLabel, Detection, ValidationError


class _Parser(argparse.ArgumentParser):
    # bad arguments are validation errors: exit 1, not argparse's 2
    def error(self, message: str):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def _write_png(img: np.ndarray, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)


def _resolve_record_path(manifest_path: Path, record: ImageRecord) -> Path:
    p = Path(record.path)
    return p if p.is_absolute() else manifest_path.parent / p


def _load_degradation(path: str | None, default: DegradationConfig) -> DegradationConfig:
    return DegradationConfig.from_json(path) if path else default


def _collect_images(inputs: list[str]) -> list[tuple[str, Path]]:
    """Expand image paths and manifest files to (image id, path) pairs."""
    out = []
    for raw in inputs:
        path = Path(raw)
        if not path.exists():
            raise ValidationError(f"input not found: {path}")
        if path.suffix == ".json":
            manifest = load_manifest(path)
            for rec in manifest.records:
                out.append((rec.id, _resolve_record_path(path, rec)))
        else:
            out.append((path.stem, path))
    if not out:
        raise ValidationError("no input images given")
    return out


def _cmd_toy_corpus(args) -> int:
    from .synthetic import make_toy_corpus

    manifest = make_toy_corpus(
        args.out, args.count, seed=args.seed, size=args.size,
        min_eggs=args.min_eggs, max_eggs=args.max_eggs,
    )
    print(manifest)
    return 0


def _cmd_degrade(args) -> int:
    config = _load_degradation(args.config, DegradationConfig())
    manifest_path = Path(args.manifest)
    manifest = load_manifest(manifest_path)
    out = Path(args.out)
    records = []
    pairs = {}
    for rec in manifest.records:
        img = load_image(_resolve_record_path(manifest_path, rec))
        degraded = degrade_with_seed(img, derive_seed(args.seed, "degrade", rec.id), config)
        rel = f"images/{rec.id}.png"
        _write_png(degraded, out / rel)
        records.append(
            ImageRecord(
                id=rec.id, path=rel, width=rec.width, height=rec.height,
                annotations=rec.annotations, device_tag=rec.device_tag,
            )
        )
        pairs[rec.id] = {
            "clean": str(_resolve_record_path(manifest_path, rec)),
            "degraded": str(out / rel),
        }
    save_manifest(DatasetManifest(tuple(records)), out / "manifest.json")
    (out / "pairs.json").write_text(json.dumps(pairs, indent=2), encoding="utf-8")
    print(out / "manifest.json")
    return 0


def _enhancer_plan(args) -> tuple[GeneratorConfig, dict]:
    defaults = PROFILES[args.profile]["enhancer"]
    cfg = GeneratorConfig(
        input_size=args.input_size or defaults["input_size"],
        depth=defaults["depth"],
        base_channels=defaults["base_channels"],
    )
    epochs = args.epochs if args.epochs is not None else defaults["epochs"]
    return cfg, {"epochs": epochs, "batch_size": defaults["batch_size"]}


def _cmd_train_enhancer(args) -> int:
    config = _load_degradation(args.config, DegradationConfig())
    manifest_path = Path(args.manifest)
    manifest = load_manifest(manifest_path)
    gen_cfg, plan = _enhancer_plan(args)
    clean = []
    degraded = []
    for rec in manifest.records:
        img = load_image(_resolve_record_path(manifest_path, rec))
        clean.append(img)
        degraded.append(degrade_with_seed(img, derive_seed(args.seed, "degrade", rec.id), config))
    model = build_enhancer(gen_cfg, seed=args.seed)
    if args.mode == "paired":
        model = train_paired(
            model, list(zip(degraded, clean)), epochs=plan["epochs"],
            seed=args.seed, batch_size=plan["batch_size"],
        )
    else:
        model = train_unpaired(
            model, degraded, clean, epochs=plan["epochs"],
            seed=args.seed, batch_size=plan["batch_size"],
        )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_enhancer(model, out)
    print(out)
    return 0


def _cmd_enhance(args) -> int:
    model = load_enhancer(args.model)
    out = Path(args.out)
    for image_id, path in _collect_images(args.inputs):
        result = enhance(model, load_image(path))
        _write_png(result, out / f"{image_id}.png")
    print(out)
    return 0


def _cmd_train_detector(args) -> int:
    defaults = PROFILES[args.profile]["detector"]
    manifest_path = Path(args.manifest)
    manifest = load_manifest(manifest_path)
    cfg = DetectorConfig(
        backbone=defaults["backbone"],
        input_size=args.input_size or defaults["input_size"],
        score_threshold=defaults["score_threshold"],
        max_detections=defaults["max_detections"],
        pretrained_source="detector" if args.profile == "paper" else "none",
    )
    samples = []
    for rec in manifest.records:
        img = load_image(_resolve_record_path(manifest_path, rec))
        samples.append((img, list(rec.annotations)))
    model = build_detector(cfg, seed=args.seed)
    model = train_detector(
        model,
        samples,
        epochs=args.epochs if args.epochs is not None else defaults["epochs"],
        seed=args.seed,
        batch_size=defaults["batch_size"],
        learning_rate=defaults["learning_rate"],
        augment=defaults["augment"],
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_detector(model, out)
    print(out)
    return 0


def _cmd_detect(args) -> int:
    model = load_detector(args.model)
    entries = _collect_images(args.inputs)
    images = [load_image(path) for _, path in entries]
    results = infer(model, images, score_threshold=args.score_threshold)
    payload = []
    for (image_id, _), dets in zip(entries, results):
        for det in nms(dets, args.nms_iou):
            payload.append(
                {
                    "image_id": image_id,
                    "label": det.label.value,
                    "bbox": list(det.bbox.as_tuple()),
                    "score": det.score,
                }
            )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    print(out)
    return 0


def _parse_detections(path: str | Path) -> dict[str, list[Detection]]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError(f"cannot read detections file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"detections file is not valid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise ValidationError("detections file must be a JSON list")
    grouped: dict[str, list[Detection]] = {}
    for i, entry in enumerate(raw):
        try:
            det = Detection(
                bbox=BoundingBox(*map(float, entry["bbox"])),
                label=ClassLabel(entry["label"]),
                score=float(entry["score"]),
            )
            det.validate()
            grouped.setdefault(str(entry["image_id"]), []).append(det)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"detections entry {i} is malformed: {exc}") from exc
    return grouped


def _cmd_evaluate(args) -> int:
    manifest = load_manifest(args.manifest)
    grouped = _parse_detections(args.detections)
    unknown = set(grouped) - {rec.id for rec in manifest.records}
    if unknown:
        raise ValidationError(f"detections reference unknown image ids: {sorted(unknown)[:5]}")
    matches = []
    for rec in manifest.records:
        dets = sorted(grouped.get(rec.id, []), key=Detection.sort_key)
        matches.append(match_detections(dets, list(rec.annotations), iou_threshold=args.iou))
    report = precision_recall(matches)
    payload = report.to_dict()
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    print(json.dumps(payload, indent=2))
    return 0


def _cmd_split(args) -> int:
    manifest = load_manifest(args.manifest)
    folds = stratified_kfold(manifest, k=args.k, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_folds(folds, out)
    print(out)
    return 0


def _cmd_run_matrix(args) -> int:
    cfg = parse_config(args.config, profile=args.profile)
    runner = ExperimentRunner(cfg)
    table = runner.run_matrix()
    if args.figures:
        runner.emit_figures([s for s in args.figures.split(",") if s])
    print((cfg.output_dir / "results.md").read_text(encoding="utf-8"))
    return 0


def _cmd_model_info(args) -> int:
    info = read_info(args.model)
    print(json.dumps(info, indent=2, default=str))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eggdetect", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True, out=True, profile=False, config=False):
        if config:
            p.add_argument("--config", help="JSON config file")
        if seed:
            p.add_argument("--seed", type=int, default=0)
        if out:
            p.add_argument("--out", required=True, help="output path")
        if profile:
            p.add_argument("--profile", choices=("desk", "paper"), default="desk")

    p = sub.add_parser("toy-corpus", help="render a synthetic annotated corpus")
    common(p)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--min-eggs", type=int, default=1)
    p.add_argument("--max-eggs", type=int, default=1)
    p.set_defaults(func=_cmd_toy_corpus)

    p = sub.add_parser("degrade", help="write a degraded copy of a corpus")
    common(p, config=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=_cmd_degrade)

    p = sub.add_parser("train-enhancer", help="train a paired or unpaired enhancer")
    common(p, profile=True, config=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=("paired", "unpaired"), default="paired")
    p.add_argument("--epochs", type=int)
    p.add_argument("--input-size", type=int)
    p.set_defaults(func=_cmd_train_enhancer)

    p = sub.add_parser("enhance", help="run an enhancer over images")
    common(p, seed=False)
    p.add_argument("--model", required=True)
    p.add_argument("inputs", nargs="+", help="image files or manifest JSONs")
    p.set_defaults(func=_cmd_enhance)

    p = sub.add_parser("train-detector", help="train a detector on a corpus")
    common(p, profile=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--input-size", type=int)
    p.set_defaults(func=_cmd_train_detector)

    p = sub.add_parser("detect", help="detect and write detections JSON")
    common(p, seed=False)
    p.add_argument("--model", required=True)
    p.add_argument("--score-threshold", type=float, default=None)
    p.add_argument("--nms-iou", type=float, default=0.5)
    p.add_argument("inputs", nargs="+", help="image files or manifest JSONs")
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("evaluate", help="score detections against a manifest")
    common(p, seed=False, out=False)
    p.add_argument("--detections", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("split", help="write a stratified fold assignment")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, default=5)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("run-matrix", help="run the experiment matrix from a config")
    common(p, seed=False, out=False, profile=True)
    p.add_argument("--config", required=True)
    p.add_argument("--figures", help="comma-separated image ids to render panels for")
    p.set_defaults(func=_cmd_run_matrix)

    p = sub.add_parser("model-info", help="print checkpoint metadata")
    common(p, seed=False, out=False)
    p.add_argument("--model", required=True)
    p.set_defaults(func=_cmd_model_info)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, DatasetError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - boundary: report and signal failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
