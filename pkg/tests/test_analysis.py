import numpy as np
import pytest

from madnet.analysis import (
    ScaleRow,
    downsample_levels,
    frequency_swap,
    lowpass_rect,
    scale_analysis,
    trend_ok,
)
from madnet.data import add_awgn

from conftest import natural_images


@pytest.mark.parametrize("name", ["camera", "astronaut", "coffee"])
def test_psnr_rises_toward_coarse_scales(name):
    rows = scale_analysis(natural_images()[name], 25, levels=4, seed=0)
    assert [r.scale for r in rows] == [1.0, 0.5, 0.25, 0.125]
    assert trend_ok(rows)


def test_vanishing_noise_gives_large_psnr():
    rows = scale_analysis(natural_images()["camera"][:128, :128], 1e-3, levels=4)
    assert all(r.psnr > 90 and r.mse < 1e-9 for r in rows)


def test_scale_analysis_rejects_small_images():
    with pytest.raises(ValueError, match="too small"):
        scale_analysis(np.zeros((80, 80, 1)), 25, levels=4)


def test_scale_analysis_uses_given_noisy_image():
    clean = natural_images()["camera"][:96, :96]
    noisy = add_awgn(clean, 15, 4)
    a = scale_analysis(clean, 15, levels=3, noisy=noisy)
    b = scale_analysis(clean, 15, levels=3, seed=4)
    assert [r.psnr for r in a] == [r.psnr for r in b]


def test_downsample_levels_crop_and_average(rng):
    img = rng.random((13, 10, 1))
    levels = downsample_levels(img, 3)
    assert [lv.shape for lv in levels] == [(12, 8, 1), (6, 4, 1), (3, 2, 1)]
    np.testing.assert_allclose(levels[2], img[:12, :8].reshape(3, 4, 2, 4, 1).mean(axis=(1, 3)), atol=1e-14)


def rows(*psnrs):
    return [ScaleRow(0.5**i, 0.0, v, 0.0) for i, v in enumerate(psnrs)]


def test_trend_rule():
    assert trend_ok(rows(30, 31, 31, 32))
    assert not trend_ok(rows(30, 30, 31, 32))
    assert not trend_ok(rows(30, 31, 30.5, 32))
    assert trend_ok(rows(30))


def test_lowpass_rect_bins():
    m = lowpass_rect(16, 16, 0.25)  # half-extent 2 -> 5x5 bins
    assert m.sum() == 25 and m[0, 0]
    assert lowpass_rect(16, 16, 0.0).sum() == 1
    assert lowpass_rect(9, 8, 1.0).all()


def test_swap_of_identical_images_is_identity(rng):
    x = rng.random((12, 10, 3))
    res = frequency_swap(x, x, 0.25)
    np.testing.assert_allclose(res.hybrid_high_noise, x, atol=1e-10)
    np.testing.assert_allclose(res.hybrid_low_noise, x, atol=1e-10)


def test_swap_spectrum_bookkeeping(rng):
    clean = rng.random((16, 12, 1))
    degraded = add_awgn(clean, 25, 1)
    res = frequency_swap(clean, degraded, 0.125)
    np.testing.assert_array_equal(res.hybrid_high_spec + res.hybrid_low_spec, res.clean_spec + res.degraded_spec)
    rep = res.report(clean, degraded)
    assert abs(rep["energy_hybrids"] - rep["energy_originals"]) <= 1e-9 * rep["energy_originals"]


def test_full_band_swap_returns_swapped_originals(rng):
    clean = rng.random((10, 14, 3))
    degraded = rng.random((10, 14, 3))
    res = frequency_swap(clean, degraded, 1.0)
    np.testing.assert_allclose(res.hybrid_high_noise, clean, atol=1e-10)
    np.testing.assert_allclose(res.hybrid_low_noise, degraded, atol=1e-10)


def test_low_band_carries_most_of_the_damage():
    clean = natural_images()["camera"]
    degraded = add_awgn(clean, 25, 0)
    rep = frequency_swap(clean, degraded, 0.125).report(clean, degraded)
    # noise is white, so the few low bins hold little of it
    assert rep["psnr_hybrid_low_freq_noise"] > rep["psnr_hybrid_high_freq_noise"] > rep["psnr_degraded"] - 1


def test_swap_errors(rng):
    with pytest.raises(ValueError, match="extents"):
        frequency_swap(rng.random((4, 4, 1)), rng.random((4, 5, 1)))
    with pytest.raises(ValueError, match="ratio"):
        frequency_swap(rng.random((4, 4, 1)), rng.random((4, 4, 1)), 1.5)
