"""Synthetic patch tooling: composite a patch onto an image under
rotation/scale/translation/blur, derive the exact ground-truth footprint
analytically from the transform, score mask overlap, and run the adaptive
attack that jointly minimizes a detector loss and the autoencoder
reconstruction distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from . import model
from .errors import DimensionError, PlacementError, TrainingError, UndefinedMetricError
from .kernel import ConvLayer, conv_backward, conv_forward


@dataclass
class DetectionBox:
    class_id: int
    confidence: float
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise DimensionError(
                f"degenerate box ({self.x1},{self.y1})-({self.x2},{self.y2})"
            )

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.x2 - self.x1, self.y2 - self.y1))


@dataclass
class PatchSpec:
    """A patch and how it is placed on an image.

    Placement is either an absolute center position or relative to a target
    box (patch height = ``diag_fraction`` of the box diagonal). Transform
    parameters are sampled uniformly from the given ranges.
    """

    patch: np.ndarray  # (P, P, 3) in [0, 1]
    mode: str = "absolute"  # "absolute" or "box-relative"
    center: tuple[float, float] | None = None  # (y, x), absolute mode
    box: DetectionBox | None = None  # box-relative mode
    diag_fraction: float = 0.2
    rotation_range: tuple[float, float] = (0.0, 0.0)  # degrees
    scale_range: tuple[float, float] = (1.0, 1.0)
    translation_jitter: float = 0.0  # pixels, each axis
    blur_sigma_range: tuple[float, float] = (0.0, 0.0)
    seed: int = 0


@dataclass
class AdaptiveAttackConfig:
    alpha: float = 1.0  # weight of the reconstruction-distance term
    steps: int = 100
    step_size: float = 0.01
    oracle_id: str = "mock"
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise DimensionError(f"alpha must be >= 0, got {self.alpha}")


@dataclass
class AttackResult:
    patches: list[np.ndarray]
    attack_loss: list[float]
    recon_dist: list[float]
    inner_products: list[float]


def apply_patch(
    image: np.ndarray, spec: PatchSpec, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Composite the patch after rotation/scale/translation/blur.

    Returns the patched image and the exact (H, W) footprint mask, computed
    from the transform itself: a pixel belongs to the footprint iff its
    center maps into the patch rectangle under the inverse transform.
    Pixels outside the footprint are never modified.
    """
    h, w, _ = image.shape
    p = spec.patch.shape[0]
    if spec.patch.shape != (p, p, 3):
        raise DimensionError(f"patch must be square (P, P, 3), got {spec.patch.shape}")

    theta = np.deg2rad(rng.uniform(*spec.rotation_range))
    scale = rng.uniform(*spec.scale_range)
    if spec.mode == "box-relative":
        if spec.box is None:
            raise PlacementError("box-relative placement requires a box")
        scale *= spec.diag_fraction * spec.box.diagonal / p
        cy = (spec.box.y1 + spec.box.y2) / 2
        cx = (spec.box.x1 + spec.box.x2) / 2
    else:
        if spec.center is None:
            raise PlacementError("absolute placement requires a center")
        cy, cx = spec.center
    if spec.translation_jitter > 0:
        cy += rng.uniform(-spec.translation_jitter, spec.translation_jitter)
        cx += rng.uniform(-spec.translation_jitter, spec.translation_jitter)

    sigma = rng.uniform(*spec.blur_sigma_range)
    patch = spec.patch.astype(np.float64)
    if sigma > 0:
        patch = np.stack(
            [gaussian_filter(patch[:, :, c], sigma) for c in range(3)], axis=2
        )

    # Transformed corner check: all four patch corners must land inside the image.
    half = p * scale / 2.0
    cos, sin = np.cos(theta), np.sin(theta)
    for sy in (-half, half):
        for sx in (-half, half):
            y = cy + cos * sy - sin * sx
            x = cx + sin * sy + cos * sx
            if not (0 <= y <= h - 1 and 0 <= x <= w - 1):
                raise PlacementError(
                    f"transformed patch corner ({y:.1f}, {x:.1f}) outside "
                    f"{h}x{w} image"
                )

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = ys - cy, xs - cx
    # inverse rotation then inverse scale, patch frame centered at P/2
    u = (cos * dy + sin * dx) / scale + p / 2.0
    v = (-sin * dy + cos * dx) / scale + p / 2.0
    footprint = (u >= 0) & (u < p) & (v >= 0) & (v < p)

    out = image.astype(np.float32).copy()
    idx = np.nonzero(footprint)
    coords = np.stack([u[idx] - 0.5, v[idx] - 0.5])
    for c in range(3):
        out[:, :, c][idx] = map_coordinates(
            patch[:, :, c], coords, order=1, mode="nearest"
        ).astype(np.float32)
    return out, footprint


def overlap_ratio(m_d: np.ndarray, m_gt: np.ndarray) -> float:
    """||m_d * m_gt|| / ||m_gt||: fraction of the ground-truth footprint
    covered by the generated mask."""
    if m_d.shape != m_gt.shape:
        raise DimensionError(f"mask shapes differ: {m_d.shape} vs {m_gt.shape}")
    gt = int(np.count_nonzero(m_gt))
    if gt == 0:
        raise UndefinedMetricError("overlap ratio undefined for empty ground truth")
    return float(np.count_nonzero(m_d & m_gt) / gt)


class MockDetectorOracle:
    """A fixed random-weight convolutional scorer with analytic gradients.

    The attack loss is the negative mean squared filter response, so
    "attacking" drives the image toward high-energy, high-contrast content,
    which is exactly what a trained block autoencoder refuses to
    reconstruct.
    """

    def __init__(self, seed: int = 0, channels: int = 8, kernel_size: int = 5):
        rng = np.random.default_rng(seed)
        k = kernel_size
        w = rng.standard_normal((channels, 3, k, k)) / np.sqrt(3 * k * k)
        self.layer = ConvLayer(
            out_channels=channels, in_channels=3, kernel_size=k, stride=2,
            padding=k // 2, weight=w.astype(np.float64),
            bias=np.zeros(channels, dtype=np.float64),
        )

    def __call__(self, image: np.ndarray, ground_truth=None) -> tuple[float, np.ndarray]:
        x = np.ascontiguousarray(image.transpose(2, 0, 1)).astype(np.float64)
        r = conv_forward(x, self.layer)
        loss = -float((r**2).mean())
        upstream = -2.0 * r / r.size
        bundle = conv_backward(x, self.layer, upstream)
        return loss, bundle.d_input.transpose(1, 2, 0)


def mock_detector_oracle(seed: int = 0) -> MockDetectorOracle:
    return MockDetectorOracle(seed=seed)


def recon_distance_and_grad(
    params: model.AEParams, image: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean absolute reconstruction distance over the block-covered region of
    ``image`` and its exact gradient w.r.t. the image."""
    from . import splitting

    grid = splitting.split(np.asarray(image, dtype=np.float32), params.block_size)
    x, _ = model._to_chw(grid.blocks, params.block_size)
    r, cache = model.forward_with_cache(params, x)
    diff = r - x
    dist = float(np.abs(diff).mean())
    s = np.sign(diff) / diff.size
    _, d_in = model.backward(params, cache, s.astype(r.dtype))
    # d/dz MAE(E(z), z) = J^T s - s
    g_blocks = (d_in - s).transpose(0, 2, 3, 1)
    g_grid = splitting.replace_blocks(grid, g_blocks.astype(np.float32))
    g_img = splitting.reassemble(g_grid).astype(np.float64)
    if grid.residual_bottom.size:
        g_img[grid.rows * grid.block_size :, :, :] = 0.0
    if grid.residual_right.size:
        g_img[: grid.rows * grid.block_size, grid.cols * grid.block_size :, :] = 0.0
    return dist, g_img


def adaptive_attack(
    image: np.ndarray,
    init_patch: np.ndarray,
    position: tuple[int, int],
    cfg: AdaptiveAttackConfig,
    params: model.AEParams,
    oracle,
) -> AttackResult:
    """Gradient descent on the patch minimizing
    attack_loss + alpha * reconstruction_distance.

    The patch is pasted axis-aligned with its top-left corner at
    ``position``; pixel updates are projected to [0, 1]. Each step records
    both losses and the inner product of the two normalized patch gradients.
    """
    top, left = position
    p = init_patch.shape[0]
    h, w, _ = image.shape
    if top < 0 or left < 0 or top + p > h or left + p > w:
        raise PlacementError(f"patch {p}x{p} at {position} outside {h}x{w} image")
    patch = np.clip(init_patch.astype(np.float64), 0.0, 1.0)
    region = (slice(top, top + p), slice(left, left + p))

    result = AttackResult(patches=[patch.copy()], attack_loss=[], recon_dist=[],
                          inner_products=[])
    for step in range(cfg.steps):
        patched = image.astype(np.float64).copy()
        patched[region] = patch
        att_loss, g_img = oracle(patched)
        rec_dist, g_rec_img = recon_distance_and_grad(params, patched)
        if not (np.isfinite(att_loss) and np.isfinite(rec_dist)):
            raise TrainingError(f"non-finite attack loss at step {step}")
        g_att = g_img[region]
        g_rec = g_rec_img[region]
        na, nr = np.linalg.norm(g_att), np.linalg.norm(g_rec)
        if na > 0 and nr > 0:
            result.inner_products.append(
                float((g_att / na).ravel() @ (g_rec / nr).ravel())
            )
        patch = np.clip(patch - cfg.step_size * (g_att + cfg.alpha * g_rec), 0.0, 1.0)
        result.attack_loss.append(float(att_loss))
        result.recon_dist.append(float(rec_dist))
        result.patches.append(patch.copy())
    return result
