"""
8-bit image files and conversions to and from (1, C, H, W) working arrays.
"""
from dataclasses import dataclass

import numpy as np
from PIL import Image

PIXEL_MAX = 255.0
COLORSPACES = {1: "gray", 3: "rgb"}


@dataclass(eq=False)
class ImageFile:
    pixels: np.ndarray  # H x W x C, uint8
    colorspace: str

    def __post_init__(self):
        if self.pixels.ndim == 2:
            self.pixels = self.pixels[:, :, None]
        if self.pixels.dtype != np.uint8:
            raise ValueError(f"Image pixels must be uint8, got {self.pixels.dtype}")
        if self.pixels.shape[2] not in COLORSPACES:
            raise ValueError(f"Images need 1 or 3 channels, got {self.pixels.shape[2]}")
        if COLORSPACES[self.pixels.shape[2]] != self.colorspace:
            raise ValueError(f"{self.pixels.shape[2]} channels do not match {self.colorspace}")

    @property
    def shape(self):
        return self.pixels.shape

    def to_array(self, dtype=np.float32):
        """(1, C, H, W) array on the [0, 1] scale."""
        x = self.pixels.transpose(2, 0, 1)[None].astype(np.float64) / PIXEL_MAX
        return x.astype(dtype)

    @classmethod
    def from_array(cls, x):
        """Inverse of to_array: scale to [0, 255], clamp, round half to even."""
        x = np.asarray(getattr(x, "data", x), dtype=np.float64)
        if x.ndim != 4 or x.shape[0] != 1:
            raise ValueError(f"Expected a (1, C, H, W) array, got {x.shape}")
        pixels = np.rint(np.clip(x[0] * PIXEL_MAX, 0, PIXEL_MAX)).astype(np.uint8)
        pixels = pixels.transpose(1, 2, 0)
        return cls(pixels, COLORSPACES.get(pixels.shape[2], "unknown"))


def load_image(path):
    """PNG (or PGM) file as an ImageFile; palette and alpha images become RGB."""
    with Image.open(path) as img:
        if img.mode in ("1", "L", "LA"):
            pixels, colorspace = np.array(img.convert("L")), "gray"
        elif img.mode in ("I", "I;16", "I;16B", "F"):
            raise ValueError(f"{path}: only 8-bit images are supported, got mode {img.mode}")
        else:
            pixels, colorspace = np.array(img.convert("RGB")), "rgb"
    return ImageFile(pixels, colorspace)


def save_image(path, image):
    """
    :param image: ImageFile or a (1, C, H, W) array on the [0, 1] scale
    """
    if not isinstance(image, ImageFile):
        image = ImageFile.from_array(image)
    pixels = image.pixels[:, :, 0] if image.colorspace == "gray" else image.pixels
    Image.fromarray(pixels).save(path, format="PNG")


def to_pixel_scale(x):
    return np.asarray(getattr(x, "data", x), dtype=np.float64) * PIXEL_MAX


def from_pixel_scale(x, dtype=np.float64):
    return (np.asarray(getattr(x, "data", x), dtype=np.float64) / PIXEL_MAX).astype(dtype)


def pad_to_multiple(x, multiple):
    """
    Replicate-pad the bottom and right edges up to a multiple of `multiple`.

    :return: (padded array, (original height, original width))
    """
    x = np.asarray(getattr(x, "data", x))
    h, w = x.shape[-2:]
    pad_h, pad_w = -h % multiple, -w % multiple
    if pad_h == 0 and pad_w == 0:
        return x, (h, w)
    widths = [(0, 0)] * (x.ndim - 2) + [(0, pad_h), (0, pad_w)]
    return np.pad(x, widths, mode="edge"), (h, w)


def crop(x, height, width):
    return np.asarray(getattr(x, "data", x))[..., :height, :width]


def phantom(size=64, rgb=False):
    """
    Piecewise-constant test image: background, a rectangle, a disc and a small
    bright square.

    :return: ImageFile
    """
    if size < 8:
        raise ValueError(f"Phantom size must be >= 8, got {size}")
    rows, cols = np.mgrid[0:size, 0:size]
    u, v = rows / size, cols / size
    img = np.full((size, size), 40.0)
    img[(u > 0.15) & (u < 0.55) & (v > 0.1) & (v < 0.6)] = 200.0
    img[(u - 0.65) ** 2 + (v - 0.6) ** 2 < 0.2 ** 2] = 120.0
    img[(u > 0.2) & (u < 0.35) & (v > 0.7) & (v < 0.85)] = 250.0
    img = img.astype(np.uint8)
    if not rgb:
        return ImageFile(img, "gray")
    tint = np.array([1.0, 0.8, 0.6])
    color = np.rint(img[:, :, None] * tint[None, None]).astype(np.uint8)
    return ImageFile(color, "rgb")


def load_source(spec):
    """
    ImageFile from a path or from 'phantom:<size>[:rgb]'.
    """
    if spec.startswith("phantom:"):
        parts = spec.split(":")
        try:
            size = int(parts[1])
        except (IndexError, ValueError):
            raise ValueError(f"Expected phantom:<size>[:rgb], got {spec!r}")
        if len(parts) > 3 or (len(parts) == 3 and parts[2] != "rgb"):
            raise ValueError(f"Expected phantom:<size>[:rgb], got {spec!r}")
        return phantom(size, rgb=len(parts) == 3)
    return load_image(spec)

