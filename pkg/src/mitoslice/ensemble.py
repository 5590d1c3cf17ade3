"""Fold-ensemble inference and the prediction CSV."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .errors import DataError, FingerprintMismatchError
from .model import load_checkpoint, model_from_checkpoint
from .preprocess import CropSpec, NormalizationStats, preprocess_eval


@dataclass
class PredictionRecord:
    sample_id: str
    per_fold_prob: list[float]
    ensemble_prob: float
    predicted_label: int
    true_label: int | None
    domain_id: str


def ensemble(per_fold_probs) -> np.ndarray:
    """Column-wise mean of a k x n probability matrix."""
    try:
        m = np.array(per_fold_probs, dtype=np.float64)
    except ValueError as exc:
        raise ValueError("ragged per-fold probability matrix") from exc
    if m.ndim != 2 or m.shape[0] < 1:
        raise ValueError(f"expected a k x n matrix with k >= 1, got shape {m.shape}")
    if np.any(m < 0) or np.any(m > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    return m.mean(axis=0)


def decide(prob, threshold: float = 0.5):
    """1 (AMF) iff prob >= threshold. Works on scalars and arrays."""
    if not 0 <= threshold <= 1:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    out = (np.asarray(prob) >= threshold).astype(int)
    return int(out) if out.ndim == 0 else out


def check_crop(archive: dict, crop: CropSpec, stats: NormalizationStats | None = None):
    stored = archive["meta"]["crop"]
    if CropSpec(**stored) != crop:
        raise FingerprintMismatchError(
            f"checkpoint fold {archive['meta']['fold']} was trained with crop {stored}, "
            f"inference requested {crop.to_dict()}"
        )
    if stats is not None and "normalization" in archive["meta"]:
        if NormalizationStats(**{k: tuple(v) for k, v in archive["meta"]["normalization"].items()}) != stats:
            raise FingerprintMismatchError("checkpoint normalization stats differ from inference stats")


@torch.no_grad()
def predict_fold(checkpoint, images: Sequence[np.ndarray], crop: CropSpec, stats: NormalizationStats,
                 batch_size: int = 64) -> np.ndarray:
    """sigmoid(logit) per image for one fold checkpoint (path or loaded archive)."""
    archive = checkpoint if isinstance(checkpoint, dict) else load_checkpoint(checkpoint)
    check_crop(archive, crop, stats)
    model = model_from_checkpoint(archive)
    x = torch.from_numpy(np.stack([preprocess_eval(im, crop, stats) for im in images]))
    logits = torch.cat([model(x[i : i + batch_size]) for i in range(0, len(x), batch_size)])
    return to_open_unit(torch.sigmoid(logits.double()).numpy())


_P_LO, _P_HI = np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0)


def to_open_unit(p):
    """Keep probabilities strictly inside (0, 1) when the sigmoid saturates in float64."""
    return np.clip(p, _P_LO, _P_HI)


def build_records(sample_ids, domains, true_labels, per_fold: np.ndarray, threshold: float = 0.5):
    per_fold = np.asarray(per_fold, dtype=np.float64)
    ens = ensemble(per_fold)
    preds = decide(ens, threshold)
    return [
        PredictionRecord(sid, per_fold[:, j].tolist(), float(ens[j]), int(preds[j]),
                         None if true_labels is None else true_labels[j], str(domains[j]))
        for j, sid in enumerate(sample_ids)
    ]


def write_predictions(records: Sequence[PredictionRecord], path, config_fingerprint: str | None = None) -> Path:
    if not records:
        raise ValueError("no predictions to write")
    k = len(records[0].per_fold_prob)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sample_id", "domain", "true_label", *[f"prob_fold_{i}" for i in range(k)],
                    "prob_ensemble", "pred_label"])
        for r in records:
            w.writerow([r.sample_id, r.domain_id, "" if r.true_label is None else r.true_label,
                        *[f"{p:.6f}" for p in r.per_fold_prob], f"{r.ensemble_prob:.6f}", r.predicted_label])
    meta = {"k": k, "n": len(records), "config_fingerprint": config_fingerprint}
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_predictions(path) -> tuple[list[PredictionRecord], str | None]:
    """Return the records and the config fingerprint from the sidecar (if any)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"predictions not found: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        fold_cols = [c for c in (reader.fieldnames or []) if c.startswith("prob_fold_")]
        records = []
        for row in reader:
            t = row["true_label"].strip()
            records.append(
                PredictionRecord(
                    sample_id=row["sample_id"],
                    per_fold_prob=[float(row[c]) for c in fold_cols],
                    ensemble_prob=float(row["prob_ensemble"]),
                    predicted_label=int(row["pred_label"]),
                    true_label=int(t) if t else None,
                    domain_id=row["domain"],
                )
            )
    if not records:
        raise DataError(f"no rows in {path}")
    meta_path = Path(str(path) + ".meta.json")
    fp = json.loads(meta_path.read_text()).get("config_fingerprint") if meta_path.is_file() else None
    return records, fp
