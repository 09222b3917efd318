import numpy as np
import pytest
from numpy.testing import assert_array_almost_equal, assert_array_equal
from PIL import Image

from diptv.utils.data import (
    ImageFile,
    crop,
    from_pixel_scale,
    load_image,
    load_source,
    pad_to_multiple,
    phantom,
    save_image,
    to_pixel_scale,
)


def test_round_trip_is_lossless(tmp_path):
    rng = np.random.default_rng(0)
    for channels, colorspace in ((1, "gray"), (3, "rgb")):
        pixels = rng.integers(0, 256, (9, 13, channels), dtype=np.uint8)
        image = ImageFile(pixels, colorspace)
        path = str(tmp_path / f"{colorspace}.png")
        save_image(path, image)
        loaded = load_image(path)
        assert loaded.colorspace == colorspace
        assert_array_equal(loaded.pixels, pixels)
        x = loaded.to_array(np.float64)
        assert x.shape == (1, channels, 9, 13)
        assert_array_equal(ImageFile.from_array(x).pixels, pixels)


def test_from_array_clamps():
    x = np.array([-0.3, 0.0, 1.0, 1.7]).reshape(1, 1, 2, 2)
    assert_array_equal(ImageFile.from_array(x).pixels[:, :, 0], [[0, 0], [255, 255]])
    with pytest.raises(ValueError):
        ImageFile.from_array(np.zeros((1, 2, 4, 4)))


def test_load_modes(tmp_path):
    rgba = np.zeros((4, 4, 4), dtype=np.uint8)
    rgba[..., 0] = 200
    Image.fromarray(rgba, "RGBA").save(tmp_path / "rgba.png")
    image = load_image(str(tmp_path / "rgba.png"))
    assert image.colorspace == "rgb" and image.shape == (4, 4, 3)

    Image.fromarray(np.full((4, 4), 1000, dtype=np.uint16)).save(tmp_path / "deep.png")
    with pytest.raises(ValueError):
        load_image(str(tmp_path / "deep.png"))
    with pytest.raises(OSError):
        load_image(str(tmp_path / "missing.png"))


def test_pixel_scale():
    x = np.random.default_rng(1).uniform(0, 1, (1, 1, 3, 3))
    assert_array_almost_equal(from_pixel_scale(to_pixel_scale(x)), x)
    assert from_pixel_scale(x, np.float32).dtype == np.float32


def test_pad_and_crop():
    x = np.random.default_rng(2).standard_normal((1, 3, 10, 13))
    padded, (h, w) = pad_to_multiple(x, 8)
    assert padded.shape == (1, 3, 16, 16)
    assert (h, w) == (10, 13)
    assert_array_equal(crop(padded, h, w), x)
    assert_array_equal(padded[..., 10:, :13], np.repeat(x[..., -1:, :], 6, axis=-2))
    same, _ = pad_to_multiple(x[..., :8, :8], 8)
    assert same.shape == (1, 3, 8, 8)


def test_phantom():
    gray = phantom(64)
    assert gray.shape == (64, 64, 1)
    assert set(np.unique(gray.pixels)) == {40, 120, 200, 250}
    color = phantom(32, rgb=True)
    assert color.colorspace == "rgb" and color.shape == (32, 32, 3)
    with pytest.raises(ValueError):
        phantom(4)


def test_load_source(tmp_path):
    assert load_source("phantom:16").shape == (16, 16, 1)
    assert load_source("phantom:16:rgb").shape == (16, 16, 3)
    for bad in ("phantom:x", "phantom:16:lab", "phantom:"):
        with pytest.raises(ValueError):
            load_source(bad)
    save_image(str(tmp_path / "p.png"), phantom(16))
    assert_array_equal(load_source(str(tmp_path / "p.png")).pixels, phantom(16).pixels)
