import numpy as np
import pytest
from numpy.testing import assert_allclose

from diptv.metrics import SNR_CAP, psnr_db, snr_db


def test_identical_images_hit_cap():
    x = np.random.default_rng(0).uniform(0, 255, (1, 3, 8, 8))
    assert snr_db(x, x) == SNR_CAP == 300.0
    assert psnr_db(x, x) == SNR_CAP


def test_snr_example():
    rng = np.random.default_rng(1)
    reference = np.full((1, 1, 32, 32), 135.0)
    noise = rng.standard_normal(reference.shape)
    noise *= 76.26 / np.sqrt(np.mean(noise ** 2))
    value = snr_db(reference, reference + noise)
    assert_allclose(value, 20 * np.log10(135.0 / 76.26), rtol=1e-10)
    assert round(value, 2) == 4.96


def test_psnr_example():
    value = psnr_db(np.full((1, 1, 4, 4), 128.0), np.zeros((1, 1, 4, 4)))
    assert_allclose(value, 10 * np.log10(255.0 ** 2 / 128.0 ** 2), rtol=1e-12)
    assert round(value, 2) == 5.99


def test_invariances():
    rng = np.random.default_rng(2)
    ref = rng.uniform(0, 255, 64)
    est = ref + rng.normal(0, 10, 64)
    perm = rng.permutation(64)
    assert_allclose(snr_db(ref[perm], est[perm]), snr_db(ref, est), rtol=1e-12)
    assert_allclose(psnr_db(ref[perm], est[perm]), psnr_db(ref, est), rtol=1e-12)
    assert_allclose(psnr_db(ref + 7, est + 7), psnr_db(ref, est), rtol=1e-10)
    assert snr_db(ref, est) > snr_db(ref, ref + 2 * (est - ref))


def test_errors():
    with pytest.raises(ValueError):
        snr_db(np.zeros(4), np.ones(4))
    with pytest.raises(ValueError):
        snr_db(np.ones(4), np.ones(5))
    with pytest.raises(ValueError):
        psnr_db(np.ones((2, 2)), np.ones(4))
