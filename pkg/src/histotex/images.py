"""Image and mask I/O: 8-bit PNG at the boundary, float64 inside."""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image

from .regions import IndexedMask


def load_image(path) -> np.ndarray:
    """Read an image as a (3, H, W) float64 array in [0, 1]."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def save_image(image: np.ndarray, path) -> None:
    """Quantize a (C, H, W) float array to 8-bit and write a PNG."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    quantized = np.round(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)
    if quantized.shape[2] == 1:
        Image.fromarray(quantized[:, :, 0], mode="L").save(path)
    else:
        Image.fromarray(quantized, mode="RGB").save(path)


def load_mask(path) -> IndexedMask:
    """Read a grayscale mask; distinct gray levels become region ids
    in ascending order."""
    with Image.open(path) as img:
        gray = np.asarray(img.convert("L"))
    return IndexedMask.from_gray_levels(gray)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
