import math

import numpy as np
import pytest

import fmue


def test_opinion_and_loss():
    op = fmue.opinion([98.0, 0.0])
    assert op["uncertainty"] == pytest.approx(0.02)
    assert sum(op["belief"]) + op["uncertainty"] == pytest.approx(1.0, abs=1e-12)
    assert fmue.kl_dirichlet_uniform([2.0, 1.0]) == pytest.approx(math.log(2) - 0.5, abs=1e-12)
    assert fmue.edl_loss([0.0, 0.0], 0)["total"] == pytest.approx(1.0, abs=1e-12)
    e = fmue.evidence_from_logits([0.0, -100.0])
    assert e[0] == pytest.approx(math.log(2))
    with pytest.raises(ValueError):
        fmue.evidence_from_logits([float("nan"), 0.0])


def test_calibration_and_metrics():
    r = fmue.calibrate_threshold([0.9, 0.8, 0.1, 0.1], [False, True, True, True], [True] * 4)
    assert r.theta == 0.8
    assert r.excluded_count == 2
    assert r.stop_reason == "exhausted"
    assert fmue.ood_detection_rate([0.2, 0.6, 0.9], 0.5) == pytest.approx(2 / 3)
    pts, auc = fmue.coverage_curve([0.9, 0.5, 0.1], [False, True, True])
    assert pts[0] == (1.0, pytest.approx(2 / 3))
    assert 0.0 <= auc <= 1.0
    orr, lo, hi, _ = fmue.odds_ratio([True] * 20 + [False] * 105, [True] * 10 + [False] * 10 + [True] * 5 + [False] * 100)
    assert orr == pytest.approx(20.0)
    assert lo < 20.0 < hi


def test_model_round_trip(tmp_path):
    m = fmue.Model.build(image_size=16, patch_size=4, embed_dim=16, depth=2, heads=2, class_count=3, seed=1)
    x = np.random.default_rng(0).normal(size=(2, 3, 16, 16))
    before = m.logits(x)
    m.inject_lora()
    assert np.abs(m.logits(x) - before).max() <= 1e-6
    m.freeze_base()
    assert all(n.startswith("head.") or "lora" in n for n in m.trainable_names)
    preds = m.predict(x)
    assert len(preds) == 2 and preds[0]["uncertainty"] > 0.8
    m.save(tmp_path / "m.fmue")
    back = fmue.Model.load(tmp_path / "m.fmue")
    assert np.array_equal(back.logits(x), m.logits(x))
    cam = m.grad_cam(x[0], 1)
    assert cam.shape == (1, 16, 16)
    assert cam.min() >= 0.0 and cam.max() <= 1.0
    with pytest.raises(ValueError):
        m.logits(np.zeros((1, 3, 8, 8)))


def test_synthetic(tmp_path):
    n_id, n_ood = fmue.generate_synthetic(tmp_path, seed=3, samples_per_class=6, patients_per_class=3)
    assert (n_id, n_ood) == (24, 12)
    assert (tmp_path / "manifest.csv").exists()
    img = fmue.preprocess(np.full((20, 30), 0.5), 32)
    assert img.shape == (3, 32, 32)
    assert np.all(img == 0.0)
