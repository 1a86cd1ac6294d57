# feig/services/render.py
#
# Netpbm renderings of the feature images: PGM (P5) for single-channel images,
# PPM (P6) for colour, both with maximum value 255.
from pathlib import Path

import numpy as np
from PIL import Image

from feig.exceptions import ImageShapeError
from feig.types import BinaryImage, GrayImage, RecurrencePlot, RgbImage

BLACK = 0
WHITE = 255


def _as_bytes(pixels: np.ndarray, s: int) -> np.ndarray:
    scaled = pixels if s == 255 else np.floor(pixels * 255.0 / s + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def rp_pixels(plot: RecurrencePlot) -> np.ndarray:
    """Recurrent pixels black, rows flipped so time runs upwards."""
    return np.where(plot.pixels[::-1] == 1, BLACK, WHITE).astype(np.uint8)


def binary_pixels(binary: BinaryImage) -> np.ndarray:
    return np.where(binary.pixels == 1, BLACK, WHITE).astype(np.uint8)


def write_pgm(pixels: np.ndarray, path) -> Path:
    pixels = np.asarray(pixels)
    if pixels.ndim == 3 and pixels.shape[0] == 1:
        pixels = pixels[0]
    if pixels.ndim != 2:
        raise ImageShapeError(f"PGM needs an h x w image, got {pixels.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels.astype(np.uint8)).save(path, format="PPM")
    return path


def write_ppm(pixels: np.ndarray, path) -> Path:
    """pixels: 3 x h x w."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[0] != 3:
        raise ImageShapeError(f"PPM needs a 3 x h x w image, got {pixels.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(pixels.transpose(1, 2, 0)).astype(np.uint8)).save(path, format="PPM")
    return path


def write_gray(gray: GrayImage, path) -> Path:
    return write_pgm(_as_bytes(gray.pixels, gray.s), path)


def write_rgb(rgb: RgbImage, path) -> Path:
    return write_ppm(_as_bytes(rgb.pixels, rgb.s), path)


def read_netpbm(path) -> np.ndarray:
    """h x w (PGM) or h x w x 3 (PPM) uint8 array."""
    with Image.open(path) as img:
        return np.asarray(img)
