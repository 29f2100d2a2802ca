"""Deterministic generator of photograph-like test images.

No image corpus ships with the package, so training and evaluation use
synthetic stand-ins for natural photographs: smooth low-frequency color
fields with soft shapes, gradients, and mild texture. The point is that the
clean distribution is locally smooth and structured, in sharp contrast to
the noise patterns the defense must reject.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter


def synth_photo(rng: np.random.Generator, height: int = 416, width: int = 416) -> np.ndarray:
    """One synthetic photograph, (H, W, 3) float32 in [0, 1]."""
    img = np.zeros((height, width, 3), dtype=np.float64)

    # smooth colored background
    sigma_bg = rng.uniform(0.08, 0.2) * min(height, width)
    for c in range(3):
        field = gaussian_filter(rng.standard_normal((height, width)), sigma_bg)
        lo, hi = field.min(), field.max()
        img[:, :, c] = (field - lo) / (hi - lo + 1e-12)

    # a linear illumination gradient
    gy, gx = rng.uniform(-0.3, 0.3, size=2)
    ys, xs = np.mgrid[0:height, 0:width]
    img += (gy * ys / height + gx * xs / width)[:, :, None]

    # a few soft elliptical objects
    for _ in range(rng.integers(2, 6)):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        ry = rng.uniform(0.05, 0.25) * height
        rx = rng.uniform(0.05, 0.25) * width
        color = rng.uniform(0, 1, size=3)
        blob = ((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2 <= 1.0
        soft = gaussian_filter(blob.astype(np.float64), rng.uniform(1.0, 4.0))
        alpha = rng.uniform(0.3, 0.8)
        img = img * (1 - alpha * soft[:, :, None]) + alpha * soft[:, :, None] * color

    # mild sensor-like texture
    grain = gaussian_filter(rng.standard_normal((height, width, 3)), 1.0)
    img += rng.uniform(0.01, 0.03) * grain

    return np.clip(img, 0.0, 1.0).astype(np.float32)


def synth_corpus(
    seed: int, count: int, height: int = 416, width: int = 416
) -> list[np.ndarray]:
    """A reproducible list of synthetic photographs."""
    rng = np.random.default_rng(seed)
    return [synth_photo(rng, height, width) for _ in range(count)]


def noise_tiles(seed: int, count: int, block_size: int = 13) -> np.ndarray:
    """Standard-normal noise tiles mapped to displayable pixels, matching the
    compositing convention used during training."""
    rng = np.random.default_rng(seed)
    t = rng.standard_normal((count, block_size, block_size, 3))
    return np.clip(0.5 + 0.25 * t, 0.0, 1.0).astype(np.float32)
