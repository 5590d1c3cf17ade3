"""Workflow steps behind the CLI: synth, split, train, predict, evaluate, ablate, report.

Artifact layout under ``paths.output_dir``::

    data/train/manifest.csv, data/test/manifest.csv   synth
    folds.csv                                          split
    checkpoints/fold_<i>.pt, logs/fold_<i>.jsonl,
    cv_metrics.json, cv_metrics.md                     train
    predictions.csv                                    predict
    metrics.json, metrics.md                           evaluate
    ablation/ratio_<r>/..., ablation.json, ablation.md ablate
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .data import DatasetManifest, generate_synthetic_dataset, load_images, load_manifest
from .ensemble import build_records, predict_fold, read_predictions, write_predictions
from .errors import ConfigError, DataError, FingerprintMismatchError
from .metrics import (
    METRIC_NAMES,
    ablation_compare,
    aggregate_reports,
    compute_report,
    detect_non_convergence,
    per_domain_report,
)
from .model import load_checkpoint
from .reporting import SUFFIX, emit_report, metrics_document, read_document
from .splits import FoldAssignment, fold_split, load_folds, save_folds, stratified_kfold
from .train import train_fold

log = logging.getLogger(__name__)


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def checkpoint_path(run_dir: Path, fold: int) -> Path:
    return run_dir / "checkpoints" / f"fold_{fold}.pt"


def run_synth(cfg: ExperimentConfig) -> dict[str, DatasetManifest]:
    s = cfg.raw["synth"]
    out = {"train": generate_synthetic_dataset(s["n"], s["amf_fraction"], cfg.purpose_seed("synth-train"),
                                               cfg.train_manifest.parent)}
    if s["n_test"] > 0:
        out["test"] = generate_synthetic_dataset(s["n_test"], s["amf_fraction"], cfg.purpose_seed("synth-test"),
                                                 cfg.test_manifest.parent)
    return out


def run_split(cfg: ExperimentConfig, path: Path | None = None) -> FoldAssignment:
    manifest = load_manifest(cfg.train_manifest)
    try:
        assignment = stratified_kfold(manifest, cfg.k, cfg.split_seed)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    save_folds(assignment, path or cfg.output_dir / "folds.csv", cfg.fingerprint)
    return assignment


def _load_assignment(cfg: ExperimentConfig, manifest: DatasetManifest) -> FoldAssignment:
    assignment = load_folds(cfg.output_dir / "folds.csv")
    if assignment.k != cfg.k:
        raise ConfigError(f"folds.csv has k={assignment.k} but config asks for k={cfg.k}; re-run split")
    if set(assignment.mapping) != {r.sample_id for r in manifest.records}:
        raise DataError("folds.csv does not cover the training manifest; re-run split")
    return assignment


def fold_validation_reports(cfg, manifest, assignment, images, run_dir: Path):
    """Per-fold validation metrics from the saved best checkpoints, plus convergence flags."""
    labels = {r.sample_id: r.label for r in manifest.records}
    criterion = cfg.raw["report"]["nonconvergence_criterion"]
    reports, converged = [], []
    for fold in range(assignment.k):
        _, val_ids = fold_split(assignment, fold)
        probs = predict_fold(checkpoint_path(run_dir, fold), [images[s] for s in val_ids],
                             cfg.crop, cfg.normalization)
        preds = (probs >= cfg.threshold).astype(int)
        truths = [labels[s] for s in val_ids]
        reports.append(compute_report(f"fold {fold}", truths, preds, probs))
        converged.append(not detect_non_convergence(preds, truths, criterion=criterion))
    return reports, converged


def _aggregates(reports, converged):
    def as_dict(aggs):
        return {m: a.to_dict() for m, a in aggs.items()}

    out = {"all_folds": as_dict(aggregate_reports(reports, converged, converged_only=False))}
    try:
        out["converged_only"] = as_dict(aggregate_reports(reports, converged, converged_only=True))
    except ValueError:
        out["converged_only"] = None  # every fold collapsed
    return out


def run_train(cfg: ExperimentConfig, run_dir: Path | None = None, assignment: FoldAssignment | None = None,
              manifest: DatasetManifest | None = None, images=None) -> dict:
    run_dir = Path(run_dir or cfg.output_dir)
    manifest = manifest or load_manifest(cfg.train_manifest)
    assignment = assignment or _load_assignment(cfg, manifest)
    images = images if images is not None else load_images(manifest)
    metas = []
    for fold in range(assignment.k):
        meta = train_fold(
            cfg.train, manifest, assignment, fold, cfg.backbone, cfg.preprocess, images=images,
            checkpoint_path=checkpoint_path(run_dir, fold), log_path=run_dir / "logs" / f"fold_{fold}.jsonl",
            config_fingerprint=cfg.fingerprint,
        )
        meta.checkpoint_path = str(Path(meta.checkpoint_path).relative_to(run_dir))
        metas.append(meta)
    reports, converged = fold_validation_reports(cfg, manifest, assignment, images, run_dir)
    doc = metrics_document(
        reports, cfg.fingerprint, grouping="fold", converged=converged,
        aggregates=_aggregates(reports, converged), checkpoints=[m.to_dict() for m in metas],
    )
    _write_json(run_dir / "cv_metrics.json", doc)
    emit_report(doc, "markdown", run_dir / "cv_metrics.md")
    return doc


def run_predict(cfg: ExperimentConfig, manifest_path=None, out_path=None) -> Path:
    manifest = load_manifest(manifest_path or cfg.test_manifest)
    paths = [checkpoint_path(cfg.output_dir, f) for f in range(cfg.k)]
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise DataError(f"missing checkpoints {missing} (run `mitoslice train` first)")
    archives = [load_checkpoint(p) for p in paths]
    fps = {a["meta"].get("config_fingerprint") for a in archives}
    if len(fps) != 1:
        raise FingerprintMismatchError(f"checkpoints come from different configs: {sorted(map(str, fps))}")
    images = load_images(manifest)
    ordered = [images[r.sample_id] for r in manifest.records]
    per_fold = np.stack([predict_fold(a, ordered, cfg.crop, cfg.normalization) for a in archives])
    records = build_records(
        [r.sample_id for r in manifest.records], [r.domain_id for r in manifest.records],
        [r.label for r in manifest.records], per_fold, cfg.threshold,
    )
    return write_predictions(records, out_path or cfg.output_dir / "predictions.csv", cfg.fingerprint)


def run_evaluate(cfg: ExperimentConfig, prediction_paths=None) -> dict:
    prediction_paths = [Path(p) for p in (prediction_paths or [cfg.output_dir / "predictions.csv"])]
    records, fps = [], set()
    for p in prediction_paths:
        recs, fp = read_predictions(p)
        records += recs
        fps.add(fp)
    if len(fps) > 1:
        raise FingerprintMismatchError(f"predictions come from different configs: {sorted(map(str, fps))}")
    if any(r.true_label is None for r in records):
        raise DataError("predictions lack true labels; cannot evaluate")
    reports = per_domain_report(records)
    doc = metrics_document(reports, fps.pop(), grouping="domain")
    _write_json(cfg.output_dir / "metrics.json", doc)
    for fmt in cfg.raw["report"]["formats"]:
        if fmt != "json":
            emit_report(doc, fmt, cfg.output_dir / f"metrics{SUFFIX[fmt]}")
    return doc


def run_ablate(cfg: ExperimentConfig, ratios=None) -> dict:
    """Train and validate one arm per crop ratio on one shared fold assignment."""
    ratios = [float(r) for r in (ratios or cfg.raw["ablation"]["ratios"])]
    if len(ratios) < 2:
        raise ConfigError("ablation needs at least two crop ratios")
    manifest = load_manifest(cfg.train_manifest)
    folds_csv = cfg.output_dir / "folds.csv"
    assignment = _load_assignment(cfg, manifest) if folds_csv.is_file() else run_split(cfg)
    images = load_images(manifest)

    arms = []
    for ratio in ratios:
        arm_cfg = cfg.with_overrides([f"preprocess.crop.ratio={ratio}"])
        arm_dir = cfg.output_dir / "ablation" / f"ratio_{ratio:g}"
        doc = run_train(arm_cfg, arm_dir, assignment, manifest, images)
        arms.append({
            "ratio": ratio,
            "config_fingerprint": arm_cfg.fingerprint,
            "per_fold": doc["rows"],
            "converged": doc["converged"],
            "aggregates": doc["aggregates"],
        })

    improvements = {}
    for scope in ("all_folds", "converged_only"):
        base = arms[0]["aggregates"][scope]
        rows = []
        for arm in arms[1:]:
            other = arm["aggregates"][scope]
            delta = None
            if base is not None and other is not None:
                delta = ablation_compare({m: base[m]["mean"] for m in METRIC_NAMES},
                                         {m: other[m]["mean"] for m in METRIC_NAMES})
            rows.append({"baseline": ratios[0], "ratio": arm["ratio"], "delta": delta})
        improvements[scope] = rows

    doc = {"kind": "ablation", "ratios": ratios, "k": assignment.k, "split_seed": assignment.seed,
           "arms": arms, "improvements": improvements}
    _write_json(cfg.output_dir / "ablation.json", doc)
    for fmt in cfg.raw["report"]["formats"]:
        if fmt != "json":
            emit_report(doc, fmt, cfg.output_dir / f"ablation{SUFFIX[fmt]}")
    return doc


def run_report(inputs, fmt: str, out_dir=None) -> list[Path]:
    written = []
    for p in inputs:
        p = Path(p)
        doc = read_document(p)
        target = Path(out_dir) / p.with_suffix(SUFFIX[fmt]).name if out_dir else p.with_suffix(SUFFIX[fmt])
        if target == p:
            target = p.with_name(p.stem + ".report" + SUFFIX[fmt])
        written.append(emit_report(doc, fmt, target))
    return written
