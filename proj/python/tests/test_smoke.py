import json
import math

import numpy as np
import pytest

import fosp


def test_compose_round_trip():
    rng = np.random.default_rng(0)
    bg = rng.uniform(size=(1, 3, 16, 16))
    smoke = rng.uniform(0.8, 1.0, size=(1, 3, 16, 16))
    alpha = rng.uniform(0.0, 0.99, size=(1, 3, 16, 16))
    image = fosp.compose(bg, smoke, alpha)
    np.testing.assert_allclose(image, (1 - alpha) * bg + alpha * smoke, atol=1e-15)
    np.testing.assert_allclose(fosp.decompose_background(image, smoke, alpha), bg, atol=1e-6)


def test_buckets_and_metrics():
    assert [fosp.split_bucket(d) for d in (0.003, 0.005, 0.025)] == ["small", "medium", "large"]
    gt = np.zeros((8, 8))
    gt[2:5, 2:5] = 1.0
    perfect = fosp.metrics(gt, gt)
    assert perfect["f_beta"] == pytest.approx(1.0)
    assert fosp.metrics(np.full((8, 8), 0.5), gt)["m"] == pytest.approx(0.25)


def test_config_validation():
    cfg = fosp.default_config()
    assert cfg["train"]["learning_rate"] == pytest.approx(6e-5)
    h = fosp.config_hash(cfg)
    cfg["eval"]["beta_sq"] = 1.0
    assert fosp.config_hash(cfg) == h
    cfg["train"]["bogus"] = 1
    with pytest.raises(ValueError, match="train.bogus"):
        fosp.config_hash(cfg)


def test_generate_train_predict(tmp_path):
    records = fosp.generate(str(tmp_path), "train", 4, seed=1, size=64)
    fosp.generate(str(tmp_path), "test", 2, seed=2, size=64)
    assert len(records) == 4
    cfg = fosp.default_config()
    cfg["model"].update(channels=[8, 6, 4, 4], inpainter_embed_channels=4, fuse_channels=8)
    cfg["train"].update(iterations=3, batch_size=2, checkpoint_every=0)
    cfg["inpainter"].update(pretrain_steps=2, batch_size=2)
    cfg["augment"]["target_size"] = 64
    log = fosp.train(cfg, tmp_path, tmp_path / "run")
    assert len(log) == 3 and all(math.isfinite(r["total"]) for r in log)

    ckpt = tmp_path / "run" / "checkpoint.ckpt"
    model = fosp.Model(str(ckpt))
    assert model.iteration == 3
    assert json.loads(model.config)["train"]["iterations"] == 3
    out = model.predict(np.random.default_rng(3).uniform(size=(2, 3, 64, 64)))
    assert out["prob"].shape == (2, 1, 64, 64)
    assert out["focus"].shape == (2, 1, 4, 4)
    assert [f.shape[-1] for f in out["foreground"]] == [2, 4, 8, 16]

    report = fosp.evaluate(str(ckpt), tmp_path)
    assert len(report["fm_recall"]) == 5


def test_bad_shapes_raise():
    with pytest.raises(ValueError, match="1-D"):
        fosp.compose(np.zeros(3), np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        fosp.compose(np.zeros((1, 3, 4, 4)), np.zeros((1, 3, 4, 4)), np.zeros((1, 1, 4, 4)))
