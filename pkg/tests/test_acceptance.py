"""Acceptance criteria. Each test carries a ``criterion`` marker; the terminal
summary prints one PASS/FAIL line per criterion."""

import math
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from mitoslice import pipeline
from mitoslice.config import ExperimentConfig
from mitoslice.ensemble import ensemble
from mitoslice.metrics import (
    ablation_compare,
    balanced_accuracy,
    balanced_accuracy_from_rates,
    confusion,
    detect_non_convergence,
    fold_aggregate,
    roc_auc,
)
from mitoslice.model import bce_with_logits
from mitoslice.preprocess import CropSpec, center_crop
from mitoslice.splits import stratified_kfold
from mitoslice.train import clip_gradients, cosine_lr

from conftest import make_manifest

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
HALF_UNIT_4DP = 5e-5 + 1e-12  # agreement "to 4 decimals"; a decimal tie counts as agreeing


def criterion(num, title):
    return pytest.mark.criterion(num, title)


# --- 1 -----------------------------------------------------------------------

DOMAIN_RATES = [(0.7500, 0.8438, 0.7969), (0.8276, 0.8636, 0.8456), (0.9444, 0.8876, 0.9160),
                (1.0000, 0.9444, 0.9722), (0.8873, 0.8789, 0.8831)]
ABLATION_RATES = [(0.6511, 0.9670, 0.8090), (0.7378, 0.9606, 0.8492)]


@criterion(1, "balanced accuracy reproduces the published per-domain, ablation and improvement rows")
def test_ac1_table_reproduction():
    t0 = time.perf_counter()
    for sens, spec, ba in DOMAIN_RATES + ABLATION_RATES:
        assert abs(balanced_accuracy_from_rates(sens, spec) - ba) <= HALF_UNIT_4DP, (sens, spec, ba)
    without = {"balanced_accuracy": 0.8090, "specificity": 0.9670, "sensitivity": 0.6511}
    with_crop = {"balanced_accuracy": 0.8492, "specificity": 0.9606, "sensitivity": 0.7378}
    delta = ablation_compare(without, with_crop)
    for name, expected in (("balanced_accuracy", 0.0402), ("specificity", -0.0064), ("sensitivity", 0.0867)):
        assert abs(delta[name] - expected) <= HALF_UNIT_4DP
    assert time.perf_counter() - t0 < 1.0


# --- 2 -----------------------------------------------------------------------


def pairwise_auc(scores, labels):
    pos, neg = scores[labels == 1], scores[labels == 0]
    gt = (pos[:, None] > neg[None, :]).sum()
    eq = (pos[:, None] == neg[None, :]).sum()
    return (gt + 0.5 * eq) / (len(pos) * len(neg))


@criterion(2, "fast ROC AUC equals O(n^2) Mann-Whitney definition within 1e-12")
def test_ac2_auc_oracle():
    rng = np.random.default_rng(2025)
    t0 = time.perf_counter()
    checked = 0
    for trial in range(1200):
        n = int(rng.integers(2, 301))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = rng.normal(size=n)
        if trial % 2:
            scores = np.round(scores * rng.integers(1, 6)) / 5  # heavy ties
        assert abs(roc_auc(scores, labels) - pairwise_auc(scores, labels)) < 1e-12
        checked += 1
    assert checked >= 1000
    assert time.perf_counter() - t0 < 30


# --- 3 -----------------------------------------------------------------------


@criterion(3, "center crop 128@0.6 is 77x77 at offset 25; side/margin sweep")
def test_ac3_crop_geometry():
    grid = np.stack(np.mgrid[:128, :128], axis=-1)
    out = center_crop(np.dstack([grid, np.zeros((128, 128))]), CropSpec(0.6))
    assert out.shape == (77, 77, 3)
    assert tuple(out[0, 0, :2]) == (25, 25) and tuple(out[-1, -1, :2]) == (101, 101)
    for h in range(2, 513):
        img = np.broadcast_to(np.arange(h)[:, None, None], (h, h, 1))
        for ratio in (0.25, 0.5, 0.6, 0.75, 1.0):
            c = center_crop(img, CropSpec(ratio))
            assert c.shape[0] == c.shape[1] == int(math.floor(ratio * h + 0.5))
            top, bottom = int(c[0, 0, 0]), h - 1 - int(c[-1, 0, 0])
            assert 0 <= bottom - top <= 1


# --- 4 -----------------------------------------------------------------------


@criterion(4, "stratified folds partition ids, per-class deviation <= 1, seed-deterministic")
def test_ac4_stratified_splits():
    rng = np.random.default_rng(4)
    for _ in range(500):
        k = int(rng.integers(2, 11))
        n = int(rng.integers(k, 400))
        frac = rng.uniform(0.02, 0.98)
        labels = (rng.random(n) < frac).astype(int)
        if labels.min() == labels.max():
            labels[int(rng.integers(n))] ^= 1
        m = make_manifest(labels.tolist())
        seed = int(rng.integers(2**31))
        a = stratified_kfold(m, k, seed)
        ids = [r.sample_id for r in m.records]
        assert sorted(a.mapping) == sorted(ids)
        assert set(a.mapping.values()) == set(range(k))
        counts = a.fold_counts(m)
        for c in (0, 1):
            ideal = (labels == c).sum() / k
            assert np.all(np.abs(counts[:, c] - ideal) <= 1)
        assert stratified_kfold(m, k, seed).mapping == a.mapping


# --- 5 -----------------------------------------------------------------------


@criterion(5, "BCE-with-logits: ln 2 at 0, gradient matches finite differences, stable at |z|=1e4")
def test_ac5_loss_gradient():
    for y in (0.0, 1.0):
        z = torch.zeros(1, dtype=torch.float64)
        assert abs(float(bce_with_logits(z, torch.tensor([y], dtype=torch.float64))) - math.log(2)) < 1e-9
    rng = np.random.default_rng(5)
    h = 1e-6
    for _ in range(50):
        n = int(rng.integers(1, 40))
        z = torch.tensor(rng.normal(0, 4, n), dtype=torch.float64, requires_grad=True)
        y = torch.tensor(rng.integers(0, 2, n), dtype=torch.float64)
        analytic = (torch.sigmoid(z.detach()) - y) / n
        bce_with_logits(z, y).backward()
        assert torch.allclose(z.grad, analytic, rtol=1e-12, atol=1e-15)
        for i in range(n):
            zp, zm = z.detach().clone(), z.detach().clone()
            zp[i] += h
            zm[i] -= h
            fd = (float(bce_with_logits(zp, y)) - float(bce_with_logits(zm, y))) / (2 * h)
            a = float(analytic[i])
            assert abs(fd - a) <= 1e-5 * max(abs(a), 1e-3)
    z = torch.tensor([1e4, -1e4, 1e4, -1e4], requires_grad=True)
    loss = bce_with_logits(z, torch.tensor([0.0, 1.0, 1.0, 0.0]))
    loss.backward()
    assert torch.isfinite(loss) and torch.isfinite(z.grad).all()


# --- 6 -----------------------------------------------------------------------


@criterion(6, "cosine schedule endpoints/midpoint exact; clipping bounds norm, keeps direction")
def test_ac6_schedule_and_clipping():
    assert abs(cosine_lr(0, 5, 1e-4, 0.0) - 1e-4) <= 1e-12
    assert abs(cosine_lr(5, 5, 1e-4, 0.0) - 0.0) <= 1e-12
    assert abs(cosine_lr(2.5, 5, 1e-4, 0.0) - 5e-5) <= 1e-12
    rng = np.random.default_rng(6)
    for _ in range(500):
        scale = 10 ** rng.uniform(-3, 7)
        grads = [torch.tensor(rng.normal(size=s) * scale, dtype=torch.float32)
                 for s in ((int(rng.integers(1, 50)),), (3, int(rng.integers(1, 9))))]
        before = [g.clone().double() for g in grads]
        clip_gradients(grads, 1000.0)
        post = math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads))
        assert post <= 1000.0 * (1 + 1e-6)
        flat_b = torch.cat([b.flatten() for b in before])
        flat_a = torch.cat([g.double().flatten() for g in grads])
        cos = torch.dot(flat_a, flat_b) / (flat_a.norm() * flat_b.norm())
        assert cos > 1 - 1e-6
        ratio = flat_a.norm() / flat_b.norm()
        assert ratio > 0 and torch.allclose(flat_a, ratio * flat_b, rtol=1e-5, atol=1e-6 * float(flat_a.abs().max()))


# --- 7 -----------------------------------------------------------------------


@criterion(7, "constant predictor -> BA 0.5 and flagged; converged-only uses exactly 3 of 5 folds")
def test_ac7_non_convergence():
    rng = np.random.default_rng(7)
    for _ in range(500):
        n = int(rng.integers(2, 200))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        const = int(rng.integers(0, 2))
        preds = np.full(n, const)
        assert balanced_accuracy(confusion(y, preds)) == 0.5
        assert detect_non_convergence(preds) is True
    flags = [True, True, False, True, False]
    agg = fold_aggregate([0.83, 0.85, 0.5, 0.81, 0.5], flags, converged_only=True)
    assert len(agg.included) == 3 and agg.included == [0, 1, 3]


# --- 8 -----------------------------------------------------------------------


@criterion(8, "ensemble: fold-permutation invariant, bounded by fold min/max, k=1 identity")
def test_ac8_ensemble_properties():
    rng = np.random.default_rng(8)
    for _ in range(1000):
        k, n = int(rng.integers(1, 8)), int(rng.integers(1, 30))
        m = rng.random((k, n))
        e = ensemble(m)
        assert np.allclose(ensemble(m[rng.permutation(k)]), e, rtol=0, atol=1e-15)
        assert np.all(e >= m.min(axis=0) - 1e-15) and np.all(e <= m.max(axis=0) + 1e-15)
        assert np.array_equal(ensemble(m[:1]), m[0])


# --- 9 -----------------------------------------------------------------------


def _desk_run(out_dir: Path):
    cfg = ExperimentConfig.load(CONFIGS / "desk.json", [f"paths.output_dir={out_dir}"])
    pipeline.run_synth(cfg)
    pipeline.run_split(cfg)
    pipeline.run_train(cfg)
    pipeline.run_predict(cfg)
    pipeline.run_evaluate(cfg)
    return cfg


@criterion(9, "end-to-end desk run (n=500, k=5, 2 epochs) < 10 min, all artifacts, deterministic")
def test_ac9_end_to_end(tmp_path):
    t0 = time.perf_counter()
    a = _desk_run(tmp_path / "a")
    elapsed = time.perf_counter() - t0
    assert a.raw["synth"]["n"] == 500 and a.k == 5 and a.train.epochs == 2
    assert a.backbone.identifier == "tiny-cnn-test" and not a.train.mixed_precision
    assert elapsed < 600, elapsed
    root = tmp_path / "a"
    expected = ["data/train/manifest.csv", "data/test/manifest.csv", "folds.csv", "cv_metrics.json",
                "cv_metrics.md", "predictions.csv", "metrics.json", "metrics.md"]
    expected += [f"checkpoints/fold_{i}.pt" for i in range(5)] + [f"logs/fold_{i}.jsonl" for i in range(5)]
    for rel in expected:
        assert (root / rel).is_file(), rel
    _desk_run(tmp_path / "b")
    assert (root / "predictions.csv").read_bytes() == (tmp_path / "b" / "predictions.csv").read_bytes()
    assert (root / "metrics.json").read_bytes() == (tmp_path / "b" / "metrics.json").read_bytes()


# --- 10 ----------------------------------------------------------------------


@criterion(10, "synthetic ablation: 0.6-crop converged-fold BA >= no-crop BA - 0.02 over 3 seeds")
def test_ac10_ablation_direction(tmp_path):
    crop_means, full_means = [], []
    for seed in (1, 2, 3):
        cfg = ExperimentConfig.load(CONFIGS / "desk_ablation.json",
                                    [f"paths.output_dir={tmp_path / str(seed)}", f"seed={seed}"])
        pipeline.run_synth(cfg)
        doc = pipeline.run_ablate(cfg, [1.0, 0.6])
        arms = {a["ratio"]: a for a in doc["arms"]}
        full = arms[1.0]["aggregates"]["converged_only"]
        crop = arms[0.6]["aggregates"]["converged_only"]
        assert full is not None and crop is not None, "an arm had no converged fold"
        full_means.append(full["balanced_accuracy"]["mean"])
        crop_means.append(crop["balanced_accuracy"]["mean"])
        print(f"seed {seed}: no-crop BA {full_means[-1]:.4f}  crop-0.6 BA {crop_means[-1]:.4f}")
        assert crop_means[-1] >= full_means[-1] - 0.02
    assert np.mean(crop_means) >= np.mean(full_means) - 0.02
