import numpy as np
import pytest

import microdenoise as md


@pytest.fixture
def noisy():
    clean = md.phantom(96, seed=3, shot_noise=False)
    clean = (clean - clean.min()) / (clean.max() - clean.min())
    return clean, md.apply_poisson(clean, 50.0, seed=1)


def test_all_methods_keep_shape_and_constants():
    flat = np.full((40, 48), 0.37)
    assert len(md.METHODS) == 9
    for name in md.METHODS:
        out = md.denoise(flat, name)
        assert out.shape == flat.shape
        np.testing.assert_array_equal(out, flat)


def test_filters_beat_raw_noise(noisy):
    clean, raw = noisy
    base = md.mse(raw, clean)
    for name in ("gaussian", "median", "wavelet"):
        assert md.mse(md.denoise(raw, name), clean) < base


def test_metrics():
    rng = np.random.default_rng(0)
    x = rng.random((32, 32))
    assert md.ssim(x, x) == pytest.approx(1.0, abs=1e-9)
    assert md.ssim(np.full((16, 16), 0.2), np.full((16, 16), 0.8)) == pytest.approx(0.4707, abs=1e-4)
    assert md.mae(x, x + 0.25) == pytest.approx(0.25)


def test_loss_and_doses():
    assert md.scaled_loss(1e-3) == pytest.approx(1.0)
    assert md.scaled_loss(4e-3) == pytest.approx(2.0)
    doses = np.array(md.sample_dose("low", 20000, seed=2))
    assert doses.min() >= 25
    assert doses.mean() == pytest.approx(100, rel=0.03)
    assert all(200 <= d <= 2500 for d in md.sample_dose("ordinary", 1000))


def test_kde():
    rng = np.random.default_rng(1)
    r = md.kde_pdf(list(rng.normal(0.5, 0.1, 2000)))
    width = 1.0 / len(r["grid"])
    assert sum(r["density"]) * width == pytest.approx(1.0, abs=1e-2)
    assert max(r["normalized"]) == 1.0


def test_errors_map_to_python():
    with pytest.raises(ValueError):
        md.denoise(np.zeros((8, 8)), "sharpen")
    with pytest.raises(ValueError):
        md.denoise(np.zeros(8), "gaussian")
    with pytest.raises(OSError):
        md.denoise_tiled(np.zeros((64, 64)), "/nonexistent/checkpoint")
