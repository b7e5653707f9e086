import math

import numpy as np
import pytest

import dadr


def test_dice_matches_pixel_counting():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = rng.random((8, 8)) > 0.5
        g = rng.random((8, 8)) > 0.5
        inter = np.logical_and(p, g).sum()
        expected = 1.0 if p.sum() + g.sum() == 0 else 2 * inter / (p.sum() + g.sum())
        assert dadr.dice(p.astype(np.uint8), g.astype(np.uint8)) == pytest.approx(expected, abs=1e-12)
    empty = np.zeros((4, 4), np.uint8)
    assert dadr.dice(empty, empty) == 1.0


def test_adain_statistics():
    rng = np.random.default_rng(1)
    x = rng.normal(2.0, 3.0, (2, 3, 8, 8)).astype(np.float32)
    gamma = rng.normal(0.0, 2.0, (2, 3)).astype(np.float32)
    beta = rng.normal(0.0, 2.0, (2, 3)).astype(np.float32)
    y = dadr.adain(x, gamma, beta)
    assert np.allclose(y.mean(axis=(2, 3)), beta, atol=1e-3)
    assert np.allclose(y.std(axis=(2, 3)), np.abs(gamma), atol=1e-3)
    ones, zeros = np.ones((2, 3), np.float32), np.zeros((2, 3), np.float32)
    assert np.array_equal(dadr.adain(x, ones, zeros), dadr.instance_norm(x))


def test_total_loss_weights():
    assert dadr.total_loss(0.2, 0.5, 1.0) == pytest.approx(10.1)
    assert dadr.total_loss(1.0, 0.0, 0.0, alpha=2.0) == 2.0
    with pytest.raises(ArithmeticError):
        dadr.total_loss(math.nan, 0.0, 0.0)


def test_kfold_split_partitions():
    folds = dadr.kfold_split(list(range(10)), 5, 3)
    assert sorted(folds) == list(range(10))
    assert sorted(list(folds.values()).count(f) for f in range(5)) == [2] * 5
    with pytest.raises(ValueError):
        dadr.kfold_split([1, 2], 3, 0)


def test_render_scene_is_deterministic_and_style_independent():
    img1, mask1 = dadr.render_scene(7, 32, 1)
    img2, mask2 = dadr.render_scene(7, 32, 2, "arterial")
    assert img1.shape == (32, 32) and mask1.shape == (32, 32)
    assert np.array_equal(mask1, mask2)
    assert not np.array_equal(img1, img2)
    assert np.array_equal(img1, dadr.render_scene(7, 32, 1)[0])
    assert img1.min() >= -1.0 and img1.max() <= 1.0


def test_config_validation():
    text = dadr.resolve_config("seed = 4\n")
    assert "seed = 4" in text
    assert "loss.alpha = 25" in text
    with pytest.raises(ValueError):
        dadr.resolve_config("bogus = 1\n")
    assert "exp1-da" in dadr.experiments()


def test_tiny_run_and_summary(tmp_path):
    text = dadr.config_text(
        experiment="baseline-upper",
        seed=2,
        output_dir=tmp_path,
        dataset__image_size=32,
        dataset__domain1_count=12,
        dataset__domain2_count=6,
        seg__depth=2,
        seg__base_channels=4,
        seg__epochs=1,
    )
    records = dadr.run_experiment(text)
    assert len(records) == 1
    r = records[0]
    assert r["experiment"] == "baseline-upper"
    assert r["mean_dice"] == pytest.approx(np.mean(r["per_image"]))
    assert dadr.run_experiment(text)[0]["per_image"] == r["per_image"]
    csv = dadr.summarize(str(tmp_path))
    assert csv.splitlines()[0].startswith("table,source,experiment")

    dadr.generate_dataset(text, str(tmp_path / "ds"))
    assert (tmp_path / "ds" / "manifest.jsonl").exists()
