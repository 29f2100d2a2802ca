"""Block-wise image tiling: split an image into non-overlapping square
blocks, reassemble, and compute per-block error statistics.

Images are (H, W, 3) arrays with pixel values in [0, 1]. The grid covers
the largest B-aligned region; when B does not divide an image dimension the
bottom/right residual strip is carried through unchanged and restored on
reassembly, so splitting never alters pixels outside the tiled region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError

BORDER_POLICY = "residual-passthrough"


@dataclass
class BlockGrid:
    """Row-major tiling of one image into B x B x 3 blocks.

    ``blocks`` has shape (rows * cols, B, B, 3). ``residual_bottom`` and
    ``residual_right`` hold the untiled border strips of the source image
    (empty when B divides both dimensions).
    """

    blocks: np.ndarray
    rows: int
    cols: int
    block_size: int
    image_height: int
    image_width: int
    residual_bottom: np.ndarray
    residual_right: np.ndarray
    border_policy: str = BORDER_POLICY

    def origin(self, index: int) -> tuple[int, int]:
        """Top-left pixel of tile ``index`` in the source image."""
        r, c = divmod(index, self.cols)
        return r * self.block_size, c * self.block_size

    def tile_view(self, row: int, col: int) -> np.ndarray:
        return self.blocks[row * self.cols + col]


def split(image: np.ndarray, block_size: int) -> BlockGrid:
    """Tile ``image`` into non-overlapping block_size-square blocks, row-major."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise InputError(f"expected (H, W, 3) image, got shape {image.shape}")
    h, w, _ = image.shape
    b = block_size
    if h < b or w < b:
        raise InputError(f"image {h}x{w} smaller than one {b}x{b} block")
    rows, cols = h // b, w // b
    covered = image[: rows * b, : cols * b]
    # (rows, cols, B, B, 3) -> flat row-major tile list
    tiles = (
        covered.reshape(rows, b, cols, b, 3)
        .transpose(0, 2, 1, 3, 4)
        .reshape(rows * cols, b, b, 3)
        .copy()
    )
    return BlockGrid(
        blocks=tiles,
        rows=rows,
        cols=cols,
        block_size=b,
        image_height=h,
        image_width=w,
        residual_bottom=image[rows * b :, :, :].copy(),
        residual_right=image[: rows * b, cols * b :, :].copy(),
    )


def reassemble(grid: BlockGrid, target_dims: tuple[int, int] | None = None) -> np.ndarray:
    """Inverse of :func:`split`: rebuild the image, restoring residual strips."""
    b = grid.block_size
    rows, cols = grid.rows, grid.cols
    if grid.blocks.shape != (rows * cols, b, b, 3):
        raise DimensionError(
            f"grid blocks shape {grid.blocks.shape} inconsistent with "
            f"{rows}x{cols} tiles of size {b}"
        )
    h, w = target_dims if target_dims is not None else (grid.image_height, grid.image_width)
    if h != grid.image_height or w != grid.image_width:
        raise DimensionError(
            f"target dims {h}x{w} != grid source dims "
            f"{grid.image_height}x{grid.image_width}"
        )
    out = np.empty((h, w, 3), dtype=grid.blocks.dtype)
    covered = (
        grid.blocks.reshape(rows, cols, b, b, 3)
        .transpose(0, 2, 1, 3, 4)
        .reshape(rows * b, cols * b, 3)
    )
    out[: rows * b, : cols * b] = covered
    if grid.residual_bottom.size:
        out[rows * b :, :, :] = grid.residual_bottom
    if grid.residual_right.size:
        out[: rows * b, cols * b :, :] = grid.residual_right
    return out


def block_errors(
    original: BlockGrid, reconstructed: BlockGrid, metric: str = "mae"
) -> np.ndarray:
    """Per-block reconstruction error as a (rows, cols) matrix.

    The default (and only built-in) metric is mean absolute error over the
    B x B x 3 values of each tile pair.
    """
    if metric != "mae":
        raise InputError(f"unknown block error metric {metric!r}")
    if (
        original.rows != reconstructed.rows
        or original.cols != reconstructed.cols
        or original.block_size != reconstructed.block_size
    ):
        raise DimensionError(
            f"grid geometry mismatch: {original.rows}x{original.cols}/"
            f"B={original.block_size} vs {reconstructed.rows}x"
            f"{reconstructed.cols}/B={reconstructed.block_size}"
        )
    diff = np.abs(original.blocks - reconstructed.blocks)
    return (
        diff.mean(axis=(1, 2, 3), dtype=np.float64).reshape(original.rows, original.cols)
    )


def replace_blocks(grid: BlockGrid, new_blocks: np.ndarray) -> BlockGrid:
    """A copy of ``grid`` with its tile contents swapped for ``new_blocks``."""
    if new_blocks.shape != grid.blocks.shape:
        raise DimensionError(
            f"replacement blocks shape {new_blocks.shape} != {grid.blocks.shape}"
        )
    return BlockGrid(
        blocks=new_blocks,
        rows=grid.rows,
        cols=grid.cols,
        block_size=grid.block_size,
        image_height=grid.image_height,
        image_width=grid.image_width,
        residual_bottom=grid.residual_bottom,
        residual_right=grid.residual_right,
        border_policy=grid.border_policy,
    )


def pick_block_size(image_height: int, supported: tuple[int, ...] = (13, 26, 52)) -> int:
    """Nearest supported block size to image_height / 32."""
    target = image_height / 32
    return min(supported, key=lambda b: abs(b - target))
