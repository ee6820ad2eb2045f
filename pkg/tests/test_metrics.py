import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

from mcwnet.metrics import gaussian_window, psnr_rgb, ssim, ssim_map


def test_psnr_identical_is_infinite(rng):
    a = rng.uniform(0, 1, (8, 8, 3))
    assert psnr_rgb(a, a) == math.inf


def test_psnr_uniform_error_closed_form():
    a = np.full((4, 5, 3), 0.5)
    assert psnr_rgb(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)


def test_psnr_symmetric_and_checks_shapes(rng):
    a, b = rng.uniform(0, 1, (2, 6, 6, 3))
    assert psnr_rgb(a, b) == psnr_rgb(b, a)
    with pytest.raises(ValueError):
        psnr_rgb(a, b[:5])
    with pytest.raises(ValueError):
        psnr_rgb(a[..., :2], b[..., :2])


@given(st.floats(0.01, 0.2), st.floats(1.05, 3.0))
def test_psnr_decreases_with_noise_amplitude(amp, factor):
    n = np.random.default_rng(0).standard_normal((8, 8, 3))
    a = np.zeros((8, 8, 3))
    assert psnr_rgb(a, a + amp * factor * n) < psnr_rgb(a, a + amp * n)


def test_gaussian_window_normalised():
    w = gaussian_window()
    assert len(w) == 11 and np.isclose(w.sum(), 1.0) and w.argmax() == 5


@pytest.mark.parametrize("seed", range(3))
def test_ssim_matches_skimage(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, (24, 30, 3))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    want = structural_similarity(a, b, data_range=1.0, channel_axis=-1, gaussian_weights=True,
                                 sigma=1.5, use_sample_covariance=False)
    assert ssim(a, b) == pytest.approx(want, abs=1e-10)


def test_ssim_identical_is_one(rng):
    a = rng.uniform(0, 1, (16, 16, 3))
    assert ssim(a, a) == 1.0


def test_ssim_symmetric(rng):
    a, b = rng.uniform(0, 1, (2, 16, 20, 3))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-15)


def test_ssim_of_inverted_binary_image_is_negative(rng):
    a = (rng.uniform(size=(20, 20)) > 0.5).astype(float)
    m = ssim_map(a, 1 - a)
    # with matched variances and opposite structure the local index approaches -1
    assert m.min() < -0.9
    assert ssim(a, 1 - a) < 0


def test_ssim_rejects_small_images():
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 40, 3)), np.zeros((10, 40, 3)))
