"""Two-level mask generation and patch removal.

A coarse block-level mask marks tiles whose reconstruction error exceeds
kappa1; a fine pixel-level mask marks pixels whose per-channel
reconstruction difference exceeds kappa2. The final mask is their
elementwise product, and masked pixels are replaced by a constant fill
(mid gray by default). Both comparisons are strict, so raising either
threshold never adds mask pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError

DEFAULT_K1 = 0.12
DEFAULT_K2 = 0.2
DEFAULT_FILL = 0.5


@dataclass
class Thresholds:
    k1: float = DEFAULT_K1  # block reconstruction-error threshold
    k2: float = DEFAULT_K2  # pixel difference threshold

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise ConfigError(f"thresholds must be positive, got {self.k1}, {self.k2}")


@dataclass
class MaskPair:
    """Coarse mask m1, fine mask m2, and their product m."""

    m1: np.ndarray
    m2: np.ndarray

    @property
    def m(self) -> np.ndarray:
        return self.m1 & self.m2


def coarse_mask(
    errors: np.ndarray, k1: float, block_size: int, dims: tuple[int, int]
) -> np.ndarray:
    """Block-constant (H, W) mask: a tile's region is 1 iff its error > k1.

    Tiles cover only the B-aligned region of ``dims``; any residual border
    is never masked.
    """
    h, w = dims
    rows, cols = errors.shape
    b = block_size
    if rows != h // b or cols != w // b:
        raise DimensionError(
            f"error grid {rows}x{cols} does not match {h}x{w} image with B={b}"
        )
    mask = np.zeros((h, w), dtype=bool)
    hot = errors > k1
    block_region = np.repeat(np.repeat(hot, b, axis=0), b, axis=1)
    mask[: rows * b, : cols * b] = block_region
    return mask


def fine_mask(original: np.ndarray, reconstructed: np.ndarray, k2: float) -> np.ndarray:
    """(H, W) mask: pixel is 1 iff max over channels of |orig - recon| > k2."""
    if original.shape != reconstructed.shape:
        raise DimensionError(
            f"original shape {original.shape} != reconstructed {reconstructed.shape}"
        )
    if original.ndim != 3 or original.shape[2] != 3:
        raise DimensionError(f"expected (H, W, 3) images, got {original.shape}")
    diff = np.abs(
        np.asarray(original, dtype=np.float32) - np.asarray(reconstructed, dtype=np.float32)
    )
    # pairwise maximum over the 3 channels; reduce-max over a length-3 inner
    # axis is an order of magnitude slower in numpy
    peak = np.maximum(np.maximum(diff[:, :, 0], diff[:, :, 1]), diff[:, :, 2])
    return peak > np.float32(k2)


def combine_and_apply(
    image: np.ndarray,
    m1: np.ndarray,
    m2: np.ndarray,
    fill: float = DEFAULT_FILL,
) -> tuple[np.ndarray, np.ndarray]:
    """Final mask m = m1 * m2; masked pixels replaced by ``fill`` in all channels."""
    h, w = image.shape[:2]
    if m1.shape != (h, w) or m2.shape != (h, w):
        raise DimensionError(
            f"mask shapes {m1.shape}/{m2.shape} != image plane ({h}, {w})"
        )
    if not 0.0 <= fill <= 1.0:
        raise ConfigError(f"fill value {fill} not in [0, 1]")
    m = m1 & m2
    out = image.copy()
    np.copyto(out, np.asarray(fill, dtype=out.dtype), where=m[:, :, None])
    return out, m


def mask_to_png_bytes(mask: np.ndarray) -> bytes:
    """Single-channel PNG (0/255) of a binary mask, for inspection."""
    from PIL import Image
    import io

    img = Image.fromarray((mask.astype(np.uint8)) * 255, mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def mask_stats(pair: MaskPair) -> dict:
    """Coverage statistics for JSON reports."""
    m = pair.m
    return dict(
        m1_fraction=float(pair.m1.mean()),
        m2_fraction=float(pair.m2.mean()),
        m_fraction=float(m.mean()),
        masked_pixels=int(m.sum()),
    )
