"""PNG/PPM image file handling. 8-bit pixels map to [0, 1] by /255."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InputError

SUPPORTED_SUFFIXES = (".png", ".ppm")


def load_image(path) -> np.ndarray:
    """Read a PNG or PPM file as a (H, W, 3) float32 array in [0, 1]."""
    path = Path(path)
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise InputError(f"{path}: unsupported format (PNG and PPM only)")
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except OSError as exc:
        raise InputError(f"{path}: cannot decode image: {exc}") from exc
    return arr.astype(np.float32) / 255.0


def save_image(image: np.ndarray, path) -> None:
    """Write a [0, 1] float image as 8-bit PNG or PPM."""
    path = Path(path)
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise InputError(f"{path}: unsupported format (PNG and PPM only)")
    arr = (np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def save_mask(mask: np.ndarray, path) -> None:
    """Write a binary mask as a single-channel 0/255 PNG."""
    Image.fromarray(mask.astype(np.uint8) * 255, mode="L").save(Path(path))


def load_mask(path) -> np.ndarray:
    """Read a single-channel mask PNG back to a boolean array."""
    with Image.open(Path(path)) as img:
        arr = np.asarray(img.convert("L"))
    return arr >= 128
