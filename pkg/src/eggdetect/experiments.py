"""Config-driven experiment matrix: domain variants, cross-validation, tables.

An experiment config is a JSON file:

    {"manifest": "corpus/manifest.json",
     "output_dir": "runs/demo",
     "seed": 7,
     "folds": {"k": 2, "seed": 1},
     "degradation": {"train": "train_degrade.json", "test": "test_degrade.json"},
     "enhancer": {"input_size": 64, "depth": 3, "base_channels": 32,
                  "epochs": 40, "unpaired_epochs": 10, "seed": 21,
                  "batch_size": 8, "pix2pix_checkpoint": null,
                  "cyclegan_checkpoint": null},
     "detector": {"backbone": "toy", "input_size": 64, "score_threshold": 0.5,
                  "max_detections": 100, "epochs": 80, "seed": 3,
                  "batch_size": 16, "learning_rate": 0.001, "augment": true},
     "settings": [["original", "original"], ["pix2pix", "low_quality"]]}

Relative paths resolve against the config file's directory. Missing keys
fall back to the selected profile ("desk" trains the small fast models;
"paper" encodes the full-scale hyperparameters: 500-epoch GANs from
scratch and a 50-epoch pretrained Faster R-CNN under 5-fold CV).

Settings are (train domain, test domain) pairs. A train domain of
"pix2pix" means: degrade the training folds with the train-time config,
enhance them with the fold's paired GAN, and train the detector on those
outputs. Test domains degrade with the wider test-time config; enhanced
test domains then run the fold's enhancer. Annotations are never
transformed: degradation is photometric and test images keep their
ground truth.

Every trained model, per-fold report, and emitted table is cached under
output_dir keyed by a hash of the resolved config plus the manifest
bytes, so reruns are cache hits and the 10-setting matrix trains only
one detector per train domain per fold.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .dataset import ImageRecord, load_manifest, save_folds, stratified_kfold
from .degrade import DegradationConfig, degrade_with_seed, to_grayscale
from .detect import (
    DetectorConfig,
    DetectorModel,
    build_detector,
    infer,
    load_detector,
    save_detector,
    train_detector,
)
from .enhance import (
    EnhancerModel,
    GeneratorConfig,
    build_enhancer,
    enhance,
    load_enhancer,
    save_enhancer,
    train_paired,
    train_unpaired,
)
from .postprocess import (
    EvaluationReport,
    average_over_folds,
    match_detections,
    nms,
    precision_recall,
)
from .seeding import derive_seed
from .types import CLASS_ORDER, ValidationError

NMS_IOU = 0.5
MATCH_IOU = 0.5


class ExperimentError(RuntimeError):
    """Runtime failure while executing an experiment."""


class DomainVariant(str, Enum):
    ORIGINAL = "original"
    GRAYSCALE = "grayscale"
    LOW_QUALITY = "low_quality"
    ENHANCED_CYCLEGAN = "cyclegan"
    ENHANCED_PIX2PIX = "pix2pix"


DISPLAY_NAMES = {
    DomainVariant.ORIGINAL: "Original",
    DomainVariant.GRAYSCALE: "Grayscale",
    DomainVariant.LOW_QUALITY: "Low Quality",
    DomainVariant.ENHANCED_CYCLEGAN: "CycleGAN",
    DomainVariant.ENHANCED_PIX2PIX: "Pix2Pix",
}

ENHANCED_VARIANTS = (DomainVariant.ENHANCED_CYCLEGAN, DomainVariant.ENHANCED_PIX2PIX)


def parse_variant(raw: str) -> DomainVariant:
    try:
        return DomainVariant(raw)
    except ValueError:
        valid = ", ".join(v.value for v in DomainVariant)
        raise ValidationError(f"unknown domain variant {raw!r}; expected one of: {valid}") from None


@dataclass(frozen=True)
class EnhancerPlan:
    config: GeneratorConfig
    epochs: int
    unpaired_epochs: int
    seed: int
    batch_size: int
    pix2pix_checkpoint: Path | None = None
    cyclegan_checkpoint: Path | None = None


@dataclass(frozen=True)
class DetectorPlan:
    config: DetectorConfig
    epochs: int
    seed: int
    batch_size: int
    learning_rate: float
    augment: bool


@dataclass(frozen=True)
class ExperimentConfig:
    manifest_path: Path
    output_dir: Path
    seed: int
    fold_k: int
    fold_seed: int
    train_degradation: DegradationConfig
    test_degradation: DegradationConfig
    enhancer: EnhancerPlan
    detector: DetectorPlan
    settings: tuple[tuple[DomainVariant, DomainVariant], ...]
    config_hash: str


PROFILES: dict[str, dict] = {
    "desk": {
        "seed": 7,
        "folds": {"k": 2, "seed": 1},
        "enhancer": {
            "input_size": 64,
            "depth": 3,
            "base_channels": 32,
            "epochs": 40,
            "unpaired_epochs": 10,
            "seed": 21,
            "batch_size": 8,
        },
        "detector": {
            "backbone": "toy",
            "input_size": 64,
            "score_threshold": 0.5,
            "max_detections": 100,
            "epochs": 80,
            "seed": 3,
            "batch_size": 16,
            "learning_rate": 1e-3,
            "augment": True,
        },
    },
    "paper": {
        "seed": 7,
        "folds": {"k": 5, "seed": 1},
        "enhancer": {
            "input_size": 256,
            "depth": 5,
            "base_channels": 64,
            "epochs": 500,
            "unpaired_epochs": 500,
            "seed": 21,
            "batch_size": 1,
        },
        "detector": {
            "backbone": "resnet50_fpn",
            "input_size": 800,
            "score_threshold": 0.5,
            "max_detections": 100,
            "epochs": 50,
            "seed": 3,
            "batch_size": 2,
            "learning_rate": 1e-4,
            "augment": True,
        },
    },
}


def _merge_defaults(defaults: dict, overrides: dict) -> dict:
    merged = dict(defaults)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge_defaults(merged[key], value)
        else:
            merged[key] = value
    return merged


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _resolve(base: Path, raw: str) -> Path:
    path = Path(raw)
    return path if path.is_absolute() else base / path


def parse_config(path: str | Path, profile: str = "desk") -> ExperimentConfig:
    """Read, validate, and resolve an experiment config file."""
    if profile not in PROFILES:
        raise ValidationError(f"unknown profile {profile!r}; expected one of: desk, paper")
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValidationError("config root must be a JSON object")
    merged = _merge_defaults(PROFILES[profile], raw)
    base = path.parent

    for key in ("manifest", "output_dir", "settings"):
        if key not in merged:
            raise ValidationError(f"config is missing required key {key!r}")
    manifest_path = _resolve(base, merged["manifest"])
    if not manifest_path.is_file():
        raise ValidationError(f"manifest not found: {manifest_path}")

    degradation = merged.get("degradation", {})
    if degradation.get("train"):
        train_deg_path = _resolve(base, degradation["train"])
        if not train_deg_path.is_file():
            raise ValidationError(f"degradation config not found: {train_deg_path}")
        train_deg = DegradationConfig.from_json(train_deg_path)
    else:
        train_deg = DegradationConfig()
    if degradation.get("test"):
        test_deg_path = _resolve(base, degradation["test"])
        if not test_deg_path.is_file():
            raise ValidationError(f"degradation config not found: {test_deg_path}")
        test_deg = DegradationConfig.from_json(test_deg_path)
    else:
        test_deg = DegradationConfig.test_time()

    enh_raw = dict(merged["enhancer"])
    checkpoints = {}
    for key in ("pix2pix_checkpoint", "cyclegan_checkpoint"):
        value = enh_raw.pop(key, None)
        if value is not None:
            ckpt = _resolve(base, value)
            if not ckpt.is_file():
                raise ValidationError(f"referenced model checkpoint not found: {ckpt}")
            checkpoints[key] = ckpt
        else:
            checkpoints[key] = None
    gen_cfg = GeneratorConfig(
        input_size=int(enh_raw["input_size"]),
        depth=int(enh_raw["depth"]),
        base_channels=int(enh_raw["base_channels"]),
        skip_connections=bool(enh_raw.get("skip_connections", True)),
    )
    gen_cfg.validate()
    enhancer = EnhancerPlan(
        config=gen_cfg,
        epochs=int(enh_raw["epochs"]),
        unpaired_epochs=int(enh_raw["unpaired_epochs"]),
        seed=int(enh_raw["seed"]),
        batch_size=int(enh_raw["batch_size"]),
        pix2pix_checkpoint=checkpoints["pix2pix_checkpoint"],
        cyclegan_checkpoint=checkpoints["cyclegan_checkpoint"],
    )
    if enhancer.epochs < 0 or enhancer.unpaired_epochs < 0 or enhancer.batch_size < 1:
        raise ValidationError("enhancer epochs must be >= 0 and batch_size >= 1")

    det_raw = dict(merged["detector"])
    det_cfg = DetectorConfig(
        backbone=det_raw["backbone"],
        pretrained_source=det_raw.get("pretrained_source", "none"),
        score_threshold=float(det_raw["score_threshold"]),
        max_detections=int(det_raw["max_detections"]),
        input_size=int(det_raw["input_size"]),
        anchor_scales=tuple(det_raw.get("anchor_scales", (16, 24, 32))),
        anchor_ratios=tuple(det_raw.get("anchor_ratios", (0.6, 1.0, 1.6))),
    )
    det_cfg.validate()
    detector = DetectorPlan(
        config=det_cfg,
        epochs=int(det_raw["epochs"]),
        seed=int(det_raw["seed"]),
        batch_size=int(det_raw["batch_size"]),
        learning_rate=float(det_raw["learning_rate"]),
        augment=bool(det_raw["augment"]),
    )
    if detector.epochs < 0 or detector.batch_size < 1 or detector.learning_rate <= 0:
        raise ValidationError("detector epochs must be >= 0, batch_size >= 1, learning_rate > 0")

    settings_raw = merged["settings"]
    if not isinstance(settings_raw, list) or not settings_raw:
        raise ValidationError("settings must be a nonempty list of [train, test] pairs")
    settings = []
    for entry in settings_raw:
        if not isinstance(entry, (list, tuple)) or len(entry) != 2:
            raise ValidationError(f"setting {entry!r} is not a [train, test] pair")
        settings.append((parse_variant(entry[0]), parse_variant(entry[1])))

    folds = merged["folds"]
    fold_k = int(folds["k"])
    fold_seed = int(folds["seed"])
    if fold_k < 2:
        raise ValidationError("folds.k must be >= 2")

    hash_payload = {
        "manifest_sha": hashlib.sha256(manifest_path.read_bytes()).hexdigest(),
        "seed": int(merged["seed"]),
        "folds": {"k": fold_k, "seed": fold_seed},
        "train_degradation": {k: list(v) for k, v in vars(train_deg).items()},
        "test_degradation": {k: list(v) for k, v in vars(test_deg).items()},
        "enhancer": {
            **{k: getattr(gen_cfg, k) for k in ("input_size", "depth", "base_channels", "skip_connections")},
            "epochs": enhancer.epochs,
            "unpaired_epochs": enhancer.unpaired_epochs,
            "seed": enhancer.seed,
            "batch_size": enhancer.batch_size,
            "pix2pix_checkpoint": str(enhancer.pix2pix_checkpoint or ""),
            "cyclegan_checkpoint": str(enhancer.cyclegan_checkpoint or ""),
        },
        "detector": {
            "config": {**vars(det_cfg)},
            "epochs": detector.epochs,
            "seed": detector.seed,
            "batch_size": detector.batch_size,
            "learning_rate": detector.learning_rate,
            "augment": detector.augment,
        },
    }
    config_hash = hashlib.sha256(_canonical_json(hash_payload).encode()).hexdigest()[:16]

    return ExperimentConfig(
        manifest_path=manifest_path,
        output_dir=_resolve(base, merged["output_dir"]),
        seed=int(merged["seed"]),
        fold_k=fold_k,
        fold_seed=fold_seed,
        train_degradation=train_deg,
        test_degradation=test_deg,
        enhancer=enhancer,
        detector=detector,
        settings=tuple(settings),
        config_hash=config_hash,
    )


def load_image(path: str | Path) -> np.ndarray:
    """Decode an image file to float32 RGB in [0, 1]."""
    with Image.open(path) as handle:
        rgb = handle.convert("RGB")
        return np.asarray(rgb, dtype=np.float32) / 255.0


def build_domain(
    records: Sequence[ImageRecord],
    variant: DomainVariant,
    *,
    images: dict[str, np.ndarray],
    degradation: DegradationConfig,
    seed: int,
    role: str,
    enhancers: dict[str, EnhancerModel] | None = None,
) -> dict[str, np.ndarray]:
    """Materialize one domain view of the given records.

    ``role`` ("train" or "test") separates the per-image degradation seed
    streams so the two sides never share noise. Annotations are untouched
    by construction: every transform here is photometric.
    """
    enhancers = enhancers or {}
    if variant in ENHANCED_VARIANTS and variant.value not in enhancers:
        raise ExperimentError(f"{DISPLAY_NAMES[variant]} variant requires a trained enhancer")
    out: dict[str, np.ndarray] = {}
    for rec in records:
        img = images[rec.id]
        if variant == DomainVariant.ORIGINAL:
            out[rec.id] = img
            continue
        if variant == DomainVariant.GRAYSCALE:
            out[rec.id] = to_grayscale(img)
            continue
        degraded = degrade_with_seed(
            img, derive_seed(seed, "degrade", role, rec.id), degradation
        )
        if variant == DomainVariant.LOW_QUALITY:
            out[rec.id] = degraded
        else:
            out[rec.id] = enhance(enhancers[variant.value], degraded)
    return out


@dataclass(frozen=True)
class ResultsTable:
    """One fold-averaged report per configured setting, in config order."""

    rows: tuple[tuple[DomainVariant, DomainVariant, EvaluationReport], ...]

    def to_dict(self) -> dict:
        return {
            "rows": [
                {"train": tr.value, "test": te.value, "report": rep.to_dict()}
                for tr, te, rep in self.rows
            ]
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ResultsTable":
        rows = tuple(
            (
                parse_variant(row["train"]),
                parse_variant(row["test"]),
                EvaluationReport.from_dict(row["report"]),
            )
            for row in raw["rows"]
        )
        return cls(rows)


def _format_cell(value: float | None) -> str:
    return "—" if value is None else f"{value:.2f}"


def _row_cells(report: EvaluationReport) -> list[float | None]:
    cells = []
    for kind in ("precision", "recall"):
        for label in CLASS_ORDER:
            cells.append(report.metric(kind, label.value))
        cells.append(report.metric(kind, "All"))
    return cells


def emit_table(results: ResultsTable, fmt: str, path: str | Path) -> Path:
    """Write the results table as md, csv, or json."""
    if not results.rows:
        raise ValidationError("results table has no rows")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    class_names = [label.value for label in CLASS_ORDER]
    if fmt == "json":
        path.write_text(json.dumps(results.to_dict(), indent=2), encoding="utf-8")
    elif fmt == "csv":
        header = ["setting"]
        for kind in ("precision", "recall"):
            header += [f"{kind}_{name}" for name in class_names] + [f"{kind}_All"]
        lines = [",".join(header)]
        for tr, te, rep in results.rows:
            cells = [f"{DISPLAY_NAMES[tr]} / {DISPLAY_NAMES[te]}"]
            cells += ["" if v is None else f"{v:.2f}" for v in _row_cells(rep)]
            lines.append(",".join(cells))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    elif fmt == "md":
        groups = ["Precision"] + [""] * len(class_names) + ["Recall"] + [""] * len(class_names)
        labels = (class_names + ["All"]) * 2
        lines = [
            "| Setting | " + " | ".join(groups) + " |",
            "|" + "---|" * (len(groups) + 1),
            "| (train / test) | " + " | ".join(labels) + " |",
        ]
        for tr, te, rep in results.rows:
            name = f"{DISPLAY_NAMES[tr]} / {DISPLAY_NAMES[te]}"
            cells = [_format_cell(v) for v in _row_cells(rep)]
            lines.append(f"| {name} | " + " | ".join(cells) + " |")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        raise ValidationError(f"unknown table format {fmt!r}; expected md, csv, or json")
    return path


def load_results_table(path: str | Path) -> ResultsTable:
    return ResultsTable.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class ExperimentRunner:
    """Executes settings against one config with content-addressed caching."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.manifest = load_manifest(cfg.manifest_path)
        self.folds = stratified_kfold(self.manifest, cfg.fold_k, cfg.fold_seed)
        self._images: dict[str, np.ndarray] = {}
        self._detectors: dict[tuple[DomainVariant, int], DetectorModel] = {}
        self._enhancers: dict[tuple[str, int], EnhancerModel] = {}
        self.cache_dir = cfg.output_dir / "cache"
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        save_folds(self.folds, cfg.output_dir / "folds.json")

    def image(self, record_id: str) -> np.ndarray:
        if record_id not in self._images:
            rec = self.manifest.record_by_id(record_id)
            self._images[record_id] = load_image(_resolve(self.cfg.manifest_path.parent, rec.path))
        return self._images[record_id]

    def _records(self, ids: set[str]) -> list[ImageRecord]:
        return [self.manifest.record_by_id(i) for i in sorted(ids)]

    def _domain(
        self, records: Sequence[ImageRecord], variant: DomainVariant, role: str, fold: int
    ) -> dict[str, np.ndarray]:
        enhancers = {}
        if variant in ENHANCED_VARIANTS:
            enhancers[variant.value] = self.enhancer_for(variant, fold)
        degradation = (
            self.cfg.train_degradation if role == "train" else self.cfg.test_degradation
        )
        images = {rec.id: self.image(rec.id) for rec in records}
        return build_domain(
            records,
            variant,
            images=images,
            degradation=degradation,
            seed=self.cfg.seed,
            role=role,
            enhancers=enhancers,
        )

    def enhancer_for(self, variant: DomainVariant, fold: int) -> EnhancerModel:
        if variant not in ENHANCED_VARIANTS:
            raise ValidationError(f"{variant.value} does not use an enhancer")
        kind = variant.value
        plan = self.cfg.enhancer
        fixed = (
            plan.pix2pix_checkpoint
            if variant == DomainVariant.ENHANCED_PIX2PIX
            else plan.cyclegan_checkpoint
        )
        key = (kind, -1 if fixed else fold)
        if key in self._enhancers:
            return self._enhancers[key]
        if fixed:
            model = load_enhancer(fixed)
        else:
            model = self._train_enhancer(variant, fold)
        self._enhancers[key] = model
        return model

    def _train_enhancer(self, variant: DomainVariant, fold: int) -> EnhancerModel:
        kind = variant.value
        path = self.cache_dir / f"enhancer-{kind}-{self.cfg.config_hash}-fold{fold}.pt"
        if path.is_file():
            return load_enhancer(path)
        train_ids, _ = self.folds.split(fold)
        records = self._records(train_ids)
        clean = [self.image(rec.id) for rec in records]
        degraded = [
            degrade_with_seed(
                img,
                derive_seed(self.cfg.seed, "degrade", "train", rec.id),
                self.cfg.train_degradation,
            )
            for rec, img in zip(records, clean)
        ]
        plan = self.cfg.enhancer
        model = build_enhancer(plan.config, seed=derive_seed(plan.seed, kind, fold))
        if variant == DomainVariant.ENHANCED_PIX2PIX:
            model = train_paired(
                model,
                list(zip(degraded, clean)),
                epochs=plan.epochs,
                seed=derive_seed(plan.seed, kind, "train", fold),
                batch_size=plan.batch_size,
            )
        else:
            model = train_unpaired(
                model,
                degraded,
                clean,
                epochs=plan.unpaired_epochs,
                seed=derive_seed(plan.seed, kind, "train", fold),
                batch_size=plan.batch_size,
            )
        save_enhancer(model, path)
        return model

    def detector_for(self, train_variant: DomainVariant, fold: int) -> DetectorModel:
        key = (train_variant, fold)
        if key in self._detectors:
            return self._detectors[key]
        path = (
            self.cache_dir
            / f"detector-{self.cfg.config_hash}-{train_variant.value}-fold{fold}.pt"
        )
        if path.is_file():
            model = load_detector(path)
            if model.config != self.cfg.detector.config:
                raise ExperimentError(f"cached detector {path} does not match the config")
        else:
            train_ids, _ = self.folds.split(fold)
            records = self._records(train_ids)
            domain = self._domain(records, train_variant, "train", fold)
            samples = [(domain[rec.id], list(rec.annotations)) for rec in records]
            plan = self.cfg.detector
            model = build_detector(plan.config, seed=derive_seed(plan.seed, "detector", fold))
            model = train_detector(
                model,
                samples,
                epochs=plan.epochs,
                seed=derive_seed(plan.seed, "detector", "train", fold),
                batch_size=plan.batch_size,
                learning_rate=plan.learning_rate,
                augment=plan.augment,
            )
            save_detector(model, path)
        self._detectors[key] = model
        return model

    def _report_path(self, train_v: DomainVariant, test_v: DomainVariant, fold: int) -> Path:
        return (
            self.cache_dir
            / f"report-{self.cfg.config_hash}-{train_v.value}-{test_v.value}-fold{fold}.json"
        )

    def run_setting(
        self, train_v: DomainVariant, test_v: DomainVariant, fold: int
    ) -> EvaluationReport:
        """One (train domain, test domain) evaluation on one fold."""
        if not 0 <= fold < self.cfg.fold_k:
            raise ValidationError(f"fold {fold} outside 0..{self.cfg.fold_k - 1}")
        cache_path = self._report_path(train_v, test_v, fold)
        if cache_path.is_file():
            return self._load_report(cache_path)
        train_ids, test_ids = self.folds.split(fold)
        if train_ids & test_ids:
            raise ExperimentError(f"fold {fold} train/test ids overlap")
        detector = self.detector_for(train_v, fold)
        records = self._records(test_ids)
        domain = self._domain(records, test_v, "test", fold)
        detections = infer(detector, [domain[rec.id] for rec in records])
        matches = []
        for rec, dets in zip(records, detections):
            kept = nms(dets, NMS_IOU)
            matches.append(match_detections(kept, list(rec.annotations), iou_threshold=MATCH_IOU))
        report = precision_recall(
            matches, setting=(DISPLAY_NAMES[train_v], DISPLAY_NAMES[test_v])
        )
        payload = report.to_dict()
        blob = {"sha256": hashlib.sha256(_canonical_json(payload).encode()).hexdigest(),
                "report": payload}
        cache_path.write_text(json.dumps(blob, indent=2), encoding="utf-8")
        return report

    def _load_report(self, path: Path) -> EvaluationReport:
        blob = json.loads(path.read_text(encoding="utf-8"))
        payload = blob.get("report")
        expected = blob.get("sha256")
        if payload is None or expected is None:
            raise ExperimentError(f"cached report {path} is malformed")
        actual = hashlib.sha256(_canonical_json(payload).encode()).hexdigest()
        if actual != expected:
            raise ExperimentError(f"cached report {path} failed its integrity check")
        return EvaluationReport.from_dict(payload)

    def run_matrix(self) -> ResultsTable:
        """Run every configured setting across all folds and emit tables."""
        rows: list[tuple[DomainVariant, DomainVariant, EvaluationReport]] = []
        for train_v, test_v in self.cfg.settings:
            try:
                reports = [
                    self.run_setting(train_v, test_v, fold) for fold in range(self.cfg.fold_k)
                ]
            except Exception as exc:
                self._dump_partial(rows, (train_v, test_v), exc)
                raise ExperimentError(
                    f"setting {train_v.value}/{test_v.value} failed: {exc}"
                ) from exc
            rows.append((train_v, test_v, average_over_folds(reports)))
        table = ResultsTable(tuple(rows))
        emit_table(table, "json", self.cfg.output_dir / "results.json")
        emit_table(table, "md", self.cfg.output_dir / "results.md")
        emit_table(table, "csv", self.cfg.output_dir / "results.csv")
        return table

    def _dump_partial(
        self,
        rows: list[tuple[DomainVariant, DomainVariant, EvaluationReport]],
        failed: tuple[DomainVariant, DomainVariant],
        exc: Exception,
    ) -> None:
        dump = {
            "completed": ResultsTable(tuple(rows)).to_dict()["rows"],
            "failed_setting": [failed[0].value, failed[1].value],
            "error": str(exc),
        }
        path = self.cfg.output_dir / "partial_results.json"
        path.write_text(json.dumps(dump, indent=2), encoding="utf-8")

    def emit_figures(self, image_ids: Sequence[str], out_dir: str | Path | None = None) -> list[Path]:
        """2x2 panels (Original / Grayscale / Degraded / Enhanced) per id.

        Detections come from the Original-trained detector of the fold
        holding the image in its test split, so panels never show a model
        that trained on the displayed image. A JSON sidecar records every
        drawn box so overlays can be verified programmatically.
        """
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        from matplotlib.patches import Rectangle

        out = Path(out_dir) if out_dir else self.cfg.output_dir / "figures"
        out.mkdir(parents=True, exist_ok=True)
        panel_variants = [
            (DomainVariant.ORIGINAL, "Original"),
            (DomainVariant.GRAYSCALE, "Grayscale"),
            (DomainVariant.LOW_QUALITY, "Degraded"),
            (DomainVariant.ENHANCED_PIX2PIX, "Enhanced"),
        ]
        colors = {label: color for label, color in zip(CLASS_ORDER, ("tab:red", "tab:orange", "tab:green", "tab:blue", "tab:purple"))}
        written = []
        for image_id in image_ids:
            try:
                rec = self.manifest.record_by_id(image_id)
            except KeyError:
                raise ValidationError(f"unknown image id {image_id!r}") from None
            fold = self.folds.assignment[image_id]
            detector = self.detector_for(DomainVariant.ORIGINAL, fold)
            fig, axes = plt.subplots(2, 2, figsize=(8, 8))
            sidecar = {"image_id": image_id, "panels": []}
            for ax, (variant, title) in zip(axes.flat, panel_variants):
                img = self._domain([rec], variant, "test", fold)[rec.id]
                dets = [d for d in nms(infer(detector, [img])[0], NMS_IOU)]
                ax.imshow(img)
                ax.set_title(title)
                ax.axis("off")
                drawn = []
                for det in dets:
                    b = det.bbox
                    ax.add_patch(
                        Rectangle(
                            (b.xmin, b.ymin),
                            b.width,
                            b.height,
                            fill=False,
                            edgecolor=colors[det.label],
                            linewidth=1.5,
                        )
                    )
                    ax.text(
                        b.xmin,
                        max(b.ymin - 1, 0),
                        f"{det.label.value} {det.score:.2f}",
                        color=colors[det.label],
                        fontsize=8,
                    )
                    drawn.append(
                        {
                            "label": det.label.value,
                            "score": det.score,
                            "bbox": list(b.as_tuple()),
                        }
                    )
                sidecar["panels"].append({"variant": variant.value, "detections": drawn})
            fig.suptitle(image_id)
            fig.tight_layout()
            figure_path = out / f"figure_{image_id}.png"
            fig.savefig(figure_path, dpi=100)
            plt.close(fig)
            (out / f"figure_{image_id}.json").write_text(
                json.dumps(sidecar, indent=2), encoding="utf-8"
            )
            written.append(figure_path)
        return written


def run_setting(
    cfg: ExperimentConfig, train_v: DomainVariant, test_v: DomainVariant, fold: int
) -> EvaluationReport:
    return ExperimentRunner(cfg).run_setting(train_v, test_v, fold)


def run_matrix(cfg: ExperimentConfig) -> ResultsTable:
    return ExperimentRunner(cfg).run_matrix()
