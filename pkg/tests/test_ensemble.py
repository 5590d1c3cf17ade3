import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from mitoslice.ensemble import build_records, decide, ensemble, predict_fold, read_predictions, write_predictions
from mitoslice.errors import FingerprintMismatchError
from mitoslice.model import TINY_BACKBONE, BackboneSpec, build_model, save_checkpoint
from mitoslice.preprocess import CropSpec, NormalizationStats

TINY = BackboneSpec(TINY_BACKBONE, pretrained=False)


def _checkpoint(tmp_path, ratio=0.6, zero_head=False, scale=None):
    model = build_model(TINY, seed=0)
    if zero_head:
        torch.nn.init.zeros_(model.head.weight)
    if scale is not None:
        with torch.no_grad():
            model.head.weight.mul_(scale)
    return save_checkpoint(tmp_path / f"ck_{ratio}.pt", model.state_dict(), {
        "backbone": TINY.to_dict(), "crop": CropSpec(ratio).to_dict(),
        "normalization": NormalizationStats().to_dict(), "fold": 0, "seed": 1, "best_val_loss": 0.3,
    })


def _images(n, seed=0):
    return list(np.random.default_rng(seed).integers(0, 256, (n, 128, 128, 3), dtype=np.uint8))


def test_ensemble_examples():
    assert np.allclose(ensemble([[0.8], [0.8], [0.8]]), [0.8])
    assert np.allclose(ensemble([[0.2], [0.8]]), [0.5])
    row = np.random.default_rng(0).random(7)
    assert np.array_equal(ensemble([row]), row)
    with pytest.raises(ValueError, match="ragged"):
        ensemble([[0.1, 0.2], [0.3]])
    with pytest.raises(ValueError):
        ensemble([[1.2]])


def test_decide_examples():
    assert decide(0.51) == 1
    assert decide(0.5) == 1
    assert decide(0.49) == 0
    assert list(decide(np.array([0.2, 0.7]), 0.7)) == [0, 1]
    with pytest.raises(ValueError):
        decide(0.5, 1.5)


@settings(max_examples=100, deadline=None)
@given(p=st.floats(0, 1), q=st.floats(0, 1), t=st.floats(0, 1))
def test_decide_monotone(p, q, t):
    lo, hi = min(p, q), max(p, q)
    assert decide(lo, t) <= decide(hi, t)


def test_monotone_across_samples():
    rng = np.random.default_rng(1)
    for _ in range(200):
        k = int(rng.integers(1, 7))
        b = rng.random(k) * 0.5
        a = 0.5 + rng.random(k) * 0.5 + 1e-9
        ens = ensemble(np.stack([a, b], axis=1))
        assert ens[0] > ens[1]


def test_predict_fold_zero_head(tmp_path):
    ck = _checkpoint(tmp_path, zero_head=True)
    probs = predict_fold(ck, _images(3), CropSpec(0.6), NormalizationStats())
    assert np.allclose(probs, 0.5)


def test_predict_fold_deterministic_and_open_interval(tmp_path):
    ck = _checkpoint(tmp_path, scale=1e4)
    imgs = _images(5)
    a = predict_fold(ck, imgs, CropSpec(0.6), NormalizationStats())
    b = predict_fold(ck, imgs, CropSpec(0.6), NormalizationStats())
    assert np.array_equal(a, b)
    assert np.all((a > 0) & (a < 1))


def test_predict_fold_rejects_crop_mismatch(tmp_path):
    ck = _checkpoint(tmp_path, ratio=0.6)
    with pytest.raises(FingerprintMismatchError, match="crop"):
        predict_fold(ck, _images(1), CropSpec(1.0), NormalizationStats())
    with pytest.raises(FingerprintMismatchError, match="normalization"):
        predict_fold(ck, _images(1), CropSpec(0.6), NormalizationStats((0.5, 0.5, 0.5), (0.5, 0.5, 0.5)))


def test_prediction_csv_round_trip(tmp_path):
    per_fold = np.array([[0.1, 0.7, 0.5], [0.3, 0.9, 0.5]])
    recs = build_records(["a", "b", "c"], ["0", "1", "1"], [0, 1, None], per_fold)
    assert [r.predicted_label for r in recs] == [0, 1, 1]
    p = write_predictions(recs, tmp_path / "p.csv", "fp1")
    lines = p.read_text().splitlines()
    assert lines[0] == "sample_id,domain,true_label,prob_fold_0,prob_fold_1,prob_ensemble,pred_label"
    assert lines[1] == "a,0,0,0.100000,0.300000,0.200000,0"
    assert lines[3] == "c,1,,0.500000,0.500000,0.500000,1"
    back, fp = read_predictions(p)
    assert fp == "fp1"
    assert back[2].true_label is None and back[1].per_fold_prob == [0.7, 0.9]
