"""End-to-end defense: split -> reconstruct -> per-block errors -> DualMask
-> masked image, with per-stage timing.

The defense always runs; it does not try to decide beforehand whether an
image is attacked.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import fastpath, masking, model, splitting
from .errors import InputError, NutNetError
from .masking import MaskPair, Thresholds


@dataclass
class DefenseConfig:
    block_size: int = 13
    thresholds: Thresholds = field(default_factory=Thresholds)
    fill: float = masking.DEFAULT_FILL
    mask_mode: str = "dual"  # "dual", "m1-only", "m2-only" (ablation)
    deterministic: bool = True


@dataclass
class DefenseResult:
    masked_image: np.ndarray
    masks: MaskPair
    final_mask: np.ndarray
    block_errors: np.ndarray
    masked_fraction: float
    stage_times_us: dict[str, float]


def _mask_pair(cfg, grid_errors, original, reconstructed, dims) -> MaskPair:
    m1 = masking.coarse_mask(grid_errors, cfg.thresholds.k1, cfg.block_size, dims)
    m2 = masking.fine_mask(original, reconstructed, cfg.thresholds.k2)
    if cfg.mask_mode == "m1-only":
        m2 = np.ones_like(m2)
    elif cfg.mask_mode == "m2-only":
        m1 = np.ones_like(m1)
    elif cfg.mask_mode != "dual":
        raise InputError(f"unknown mask mode {cfg.mask_mode!r}")
    return MaskPair(m1=m1, m2=m2)


def defend(image: np.ndarray, params: model.AEParams, cfg: DefenseConfig) -> DefenseResult:
    """Run the full defense on one (H, W, 3) image in [0, 1]."""
    if cfg.block_size != params.block_size:
        raise InputError(
            f"config block size {cfg.block_size} != model block size {params.block_size}"
        )
    times: dict[str, float] = {}

    if not 0.0 <= cfg.fill <= 1.0:
        raise InputError(f"fill value {cfg.fill} not in [0, 1]")
    t0 = time.perf_counter_ns()
    image = np.asarray(image, dtype=np.float32)
    grid = splitting.split(image, cfg.block_size)
    t1 = time.perf_counter_ns()
    recon_blocks = model.reconstruct_blocks(params, grid.blocks)
    recon_grid = splitting.replace_blocks(grid, recon_blocks)
    t2 = time.perf_counter_ns()
    errors = splitting.block_errors(grid, recon_grid)
    t3 = time.perf_counter_ns()
    if cfg.mask_mode == "dual":
        # fused single-pass DualMask; equivalent to masking.coarse_mask /
        # fine_mask / combine_and_apply on the reassembled reconstruction
        h, w = image.shape[:2]
        m1 = np.empty((h, w), dtype=bool)
        m2 = np.empty((h, w), dtype=bool)
        m = np.empty((h, w), dtype=bool)
        masked = np.empty_like(image)
        fastpath._dualmask_apply(
            image, recon_blocks, grid.rows, grid.cols, cfg.block_size,
            errors > cfg.thresholds.k1, np.float32(cfg.thresholds.k2),
            np.float32(cfg.fill), m1, m2, m, masked,
        )
        pair = MaskPair(m1=m1, m2=m2)
    else:
        recon_image = splitting.reassemble(recon_grid)
        pair = _mask_pair(cfg, errors, image, recon_image, image.shape[:2])
        masked, m = masking.combine_and_apply(image, pair.m1, pair.m2, cfg.fill)
    t4 = time.perf_counter_ns()

    times["split"] = (t1 - t0) / 1e3
    times["reconstruct"] = (t2 - t1) / 1e3
    times["errors"] = (t3 - t2) / 1e3
    times["mask"] = (t4 - t3) / 1e3
    times["total"] = (t4 - t0) / 1e3
    return DefenseResult(
        masked_image=masked,
        masks=pair,
        final_mask=m,
        block_errors=errors,
        masked_fraction=float(m.mean()),
        stage_times_us=times,
    )


def defend_batch(
    images: list[np.ndarray], params: model.AEParams, cfg: DefenseConfig
) -> list[DefenseResult | NutNetError]:
    """Defend each image independently; a failing image yields its error
    in place of a result and the batch continues."""
    out: list[DefenseResult | NutNetError] = []
    for img in images:
        try:
            out.append(defend(img, params, cfg))
        except NutNetError as exc:
            out.append(exc)
    return out
