import json

import numpy as np
import pytest

import imageflow


def test_metric_closed_forms():
    a = np.zeros((1, 8, 8), np.float32)
    b = np.full((1, 8, 8), 0.1, np.float32)
    assert imageflow.mse(a, b) == pytest.approx(0.01, rel=1e-6)
    assert imageflow.mae(a, b) == pytest.approx(0.1, rel=1e-6)
    assert imageflow.psnr(a, b) == pytest.approx(20.0, abs=1e-5)
    assert imageflow.ssim(a, a) == pytest.approx(1.0)
    x = np.zeros((10, 10), bool)
    y = np.zeros((10, 10), bool)
    x[0, 0] = True
    y[3, 4] = True
    assert imageflow.hausdorff(x, y) == pytest.approx(5.0)
    assert imageflow.dice(x, x) == 1.0
    assert imageflow.dice(x, y) == 0.0


def test_linear_extrapolation_is_exact_on_lines():
    base = np.random.default_rng(0).random((1, 4, 4)).astype(np.float32) * 0.5
    times = [0.0, 1.0, 3.0]
    images = [base + 0.05 * t for t in times]
    out = imageflow.linear_extrapolate(images, times, 4.0)
    np.testing.assert_allclose(out, base + 0.2, atol=1e-5)
    spline = imageflow.cubic_spline_extrapolate(images, times, 4.0)
    np.testing.assert_allclose(spline, base + 0.2, atol=1e-5)


def test_pca_coordinates():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(40, 5)) * np.array([4.0, 2.0, 1.0, 0.5, 0.1])
    pca = imageflow.fit_pca(x, 2)
    centered = x - x.mean(axis=0)
    _, vecs = np.linalg.eigh(np.cov(centered, rowvar=False))
    top = vecs[:, ::-1][:, :2]
    np.testing.assert_allclose(np.abs(pca["coordinates"]), np.abs(centered @ top), atol=1e-6)


def test_config_errors():
    resolved = json.loads(imageflow.resolve_config("{}"))
    assert resolved["training"]["learning_rate"] == 1e-4
    with pytest.raises(imageflow.ConfigError):
        imageflow.resolve_config('{"bogus": 1}')
    with pytest.raises(imageflow.Error):
        imageflow.resolve_config('{"dataset": {"split_ratios": [0.5, 0.5, 0.5]}}')
    with pytest.raises(imageflow.IoError):
        imageflow.read_png("/nonexistent.png")


TINY = json.dumps({
    "seed": 2,
    "dataset": {"num_series": 6, "image_size": 16, "visits_min": 3, "visits_max": 3,
                "lesion_base_radius": 2.0, "split_ratios": [0.5, 0.25, 0.25]},
    "backbone": {"base_channels": 8, "channel_multipliers": [1, 2], "blocks_per_resolution": 1,
                 "time_embedding_dim": 16},
    "dynamics": {"steps_per_unit_time": 4},
    "objectives": {"projection_dim": 16},
    "training": {"epochs": 1, "grad_accumulation": 2, "effective_batch": 2},
    "evaluation": {"segmenter": {"epochs": 1}},
})


def test_pipeline(tmp_path):
    assert imageflow.synth(TINY, tmp_path / "data") == 6
    best_epoch, _ = imageflow.train(TINY, tmp_path / "data", tmp_path / "run")
    assert best_epoch == 0
    ckpt = tmp_path / "run" / "best.ckpt"
    meta, tensors = imageflow.read_tensor_archive(ckpt)
    assert json.loads(meta)["model"]["backbone"]["image_size"] == 16
    assert all(v.dtype == np.float32 for v in tensors.values())

    series = sorted(p for p in (tmp_path / "data").iterdir() if p.is_dir())[0]
    image = imageflow.read_png(series / "img_000.png")
    assert image.shape == (1, 16, 16)
    same = imageflow.predict(ckpt, image, 1.0, 1.0)
    later = imageflow.predict(ckpt, image, 1.0, 5.0)
    assert same.shape == later.shape == (1, 16, 16)
    with pytest.raises(imageflow.ConfigError):
        imageflow.predict(ckpt, image, 5.0, 1.0)

    csv = imageflow.evaluate(TINY, tmp_path / "data", ["linear", "ode"], {"ode": [ckpt]}, tmp_path / "eval")
    assert len(csv.strip().splitlines()) == 1 + 2 * 3 * 6
