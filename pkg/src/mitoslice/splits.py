"""Label-stratified k-fold assignment."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DatasetManifest
from .errors import DataError

DEFAULT_SEED = 42


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    mapping: dict[str, int]
    seed: int

    def fold_counts(self, manifest: DatasetManifest) -> np.ndarray:
        """Per-fold class counts, shape (k, 2) indexed [fold, label]."""
        counts = np.zeros((self.k, 2), dtype=int)
        for r in manifest.records:
            counts[self.mapping[r.sample_id], r.label] += 1
        return counts


def stratified_kfold(manifest: DatasetManifest, k: int = 5, seed: int = DEFAULT_SEED) -> FoldAssignment:
    """Shuffle each class with ``seed`` and deal its members round-robin.

    Dealing continues across classes from where the previous class stopped,
    so total fold sizes also differ by at most one.
    """
    n = len(manifest)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of samples ({n})")
    by_class: dict[int, list[str]] = {0: [], 1: []}
    for r in manifest.records:
        by_class[r.label].append(r.sample_id)
    present = [c for c in (0, 1) if by_class[c]]
    if len(present) < 2:
        warnings.warn(f"only class {present} present; stratifying over present classes only")

    rng = np.random.default_rng(seed)
    mapping: dict[str, int] = {}
    cursor = 0
    for c in present:
        ids = by_class[c]
        for j in rng.permutation(len(ids)):
            mapping[ids[j]] = cursor % k
            cursor += 1
    # Preserve manifest order in the mapping for stable serialization.
    mapping = {r.sample_id: mapping[r.sample_id] for r in manifest.records}
    return FoldAssignment(k=k, mapping=mapping, seed=seed)


def fold_split(assignment: FoldAssignment, fold: int) -> tuple[list[str], list[str]]:
    if not 0 <= fold < assignment.k:
        raise ValueError(f"fold {fold} out of range for k={assignment.k}")
    train = [sid for sid, f in assignment.mapping.items() if f != fold]
    val = [sid for sid, f in assignment.mapping.items() if f == fold]
    return train, val


def save_folds(assignment: FoldAssignment, path, fingerprint: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sample_id", "fold"])
        for sid, fold in assignment.mapping.items():
            w.writerow([sid, fold])
    meta = {"k": assignment.k, "seed": assignment.seed, "config_fingerprint": fingerprint}
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_folds(path) -> FoldAssignment:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"fold assignment not found: {path} (run `mitoslice split` first)")
    with open(path, newline="", encoding="utf-8") as f:
        mapping = {row["sample_id"]: int(row["fold"]) for row in csv.DictReader(f)}
    if not mapping:
        raise DataError(f"empty fold assignment: {path}")
    meta_path = Path(str(path) + ".meta.json")
    meta = json.loads(meta_path.read_text()) if meta_path.is_file() else {}
    k = meta.get("k", max(mapping.values()) + 1)
    return FoldAssignment(k=k, mapping=mapping, seed=meta.get("seed", DEFAULT_SEED))
