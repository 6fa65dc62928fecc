# Copyright (c) 2026 The attr-eval Authors
# SPDX-License-Identifier: Apache-2.0

import json
import math

import numpy as np
import pytest

import attreval


def test_parameter_counts():
    assert attreval.count_parameters("mini-d2") == 2474
    assert attreval.count_parameters("resnet50-convbias") == 23532418
    assert attreval.mini_family() == ["mini-d2", "mini-d4", "mini-d8", "mini-d16"]
    with pytest.raises(attreval.ConfigError):
        attreval.count_parameters("resnet19")


def test_synthetic_samples():
    samples = attreval.generate_synthetic(diseased=4, healthy=2, side=32, seed=3)
    assert len(samples) == 6
    assert sorted(s["label"] for s in samples) == [0, 0, 1, 1, 1, 1]
    for s in samples:
        assert s["image"].shape == (1, 32, 32)
        assert s["mask"].shape == (32, 32)
        assert s["mask"].sum() > 0


def test_metrics_match_hand_values():
    v = np.arange(9, 0, -1, dtype=float).reshape(3, 3)
    m = np.zeros((3, 3), dtype=np.uint8)
    m[:2, :2] = 1
    assert attreval.rra(v, m) == 0.75
    assert attreval.par(np.array([[2.0, 1.0], [3.0, -4.0]]), np.array([[1, 1], [0, 0]])) == (0.5, False)
    assert attreval.rma(np.array([[1.0, -1.0, 2.0]]), np.array([[1, 1, 0]])) == (0.0, False)


def test_statistics():
    h, df, p = attreval.kruskal_wallis([[1, 2, 3], [4, 5, 6], [7, 8, 9]])
    assert df == 2
    assert math.isclose(h, 7.2, rel_tol=1e-12)
    assert math.isclose(p, math.exp(-3.6), rel_tol=1e-12)
    r = attreval.mann_whitney_u([1, 2], [3, 4], exact=True)
    assert r["u"] == 0 and math.isclose(r["p"], 1 / 3)
    assert attreval.bonferroni([0.01, 0.04], 2) == pytest.approx([0.02, 0.08])


def test_model_attributions():
    x = attreval.generate_synthetic(diseased=1, healthy=1, side=32, seed=1)[0]["image"]
    model = attreval.Model("mini-d2", seed=5)
    assert model.logits(x[None]).shape == (1, 2)
    sal = model.saliency(x, 1)
    assert sal.shape == (32, 32) and (sal >= 0).all()
    values, delta, gap = model.integrated_gradients(x, 1, steps=32)
    assert values.shape == (32, 32)
    assert math.isclose(values.sum(), delta, abs_tol=gap + 1e-12)
    gs1 = model.gradient_shap(x, 1, samples=8, seed=4)
    gs2 = model.gradient_shap(x, 1, samples=8, seed=4)
    assert np.array_equal(gs1, gs2)
    with pytest.raises(attreval.ShapeError):
        model.logits(np.zeros((1, 3, 32, 32)))


def test_pipeline_stages(tmp_path):
    cfg = {
        "output_dir": str(tmp_path / "out"),
        "seed": 3,
        "dataset": {
            "synthetic": {"diseased": 40, "healthy": 30, "side": 16, "blob_radius_min": 0.8, "blob_radius_max": 1.5},
            "preprocess": {"height": 16, "width": 16},
        },
        "models": ["mini-d2", "mini-d4"],
        "train": {"learning_rate": 0.01, "batch_size": 8, "epochs": 1},
        "attribution": {"ig_steps": 4, "gs_samples": 4, "gs_train_baselines": 2},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    with pytest.raises(attreval.StateError):
        attreval.run_stage(str(path), "train")
    for stage in ["gen-data", "train", "explain", "evaluate", "compare", "report"]:
        attreval.run_stage(str(path), stage)
    metrics = json.loads((tmp_path / "out/models/mini-d2/metrics.json").read_text())
    assert set(metrics) == {"accuracy", "auc_roc", "cross_entropy", "confusion"}
    summary = json.loads((tmp_path / "out/compare/summary.json").read_text())
    assert summary["omnibus_rows"] == 12
    assert len(attreval.config_hash(str(path))) == 16
