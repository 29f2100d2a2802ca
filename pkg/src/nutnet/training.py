"""Destructive training of the block autoencoder.

Non-clean samples are synthesized by pasting scaled/stretched noise
rectangles onto clean images; the loss drives clean blocks toward faithful
reconstruction and noise blocks toward zero-mean, unit-variance output:

    MAE(clean, recon) + |mean(noise recon)| + |var(noise recon) - 1|

Sampled standard-normal noise is mapped to displayable pixels by
v = clamp(0.5 + 0.25 t, 0, 1) when composited; the mean/variance targets
apply to the raw autoencoder output.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from . import model, splitting
from .errors import ConfigError, TrainingError
from .kernel import AdamState, adam_step

NOISE_BLOCK_COVERAGE = 0.5  # fraction of overlaid pixels that makes a block "noise"


@dataclass
class NoiseOverlaySpec:
    """How noise rectangles are synthesized and pasted onto clean images."""

    distribution: str = "normal"  # "normal" or "uniform"
    count_range: tuple[int, int] = (1, 4)
    size_range: tuple[float, float] = (1 / 30, 1 / 4)  # fraction of image side
    stretch_range: tuple[float, float] = (0.5, 2.0)  # height/width aspect factor
    zoom_range: tuple[float, float] = (1.0, 1.0)  # spatial scale of the pattern
    blur_sigma_range: tuple[float, float] = (0.0, 1.0)  # post-composite blur
    seed: int = 0

    def __post_init__(self):
        if self.distribution not in ("normal", "uniform"):
            raise ConfigError(f"unknown noise distribution {self.distribution!r}")
        if self.count_range[0] < 1:
            raise ConfigError("overlay count must be >= 1")
        lo, hi = self.size_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ConfigError(f"overlay size fractions {self.size_range} not in (0, 1]")
        if not 1.0 <= self.zoom_range[0] <= self.zoom_range[1]:
            raise ConfigError(f"zoom range {self.zoom_range} must satisfy 1 <= lo <= hi")
        if not 0.0 <= self.blur_sigma_range[0] <= self.blur_sigma_range[1]:
            raise ConfigError(
                f"blur range {self.blur_sigma_range} must satisfy 0 <= lo <= hi"
            )


@dataclass
class TrainConfig:
    epochs: int = 120
    batch_size: int = 256
    learning_rate: float = 1e-3
    lr_decay_at: float = 0.66  # fraction of epochs after which lr is scaled
    lr_decay_factor: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    mix_ratio: float = 0.5  # fraction of clean blocks per batch
    # The absolute-value loss terms have constant-magnitude gradients, so a
    # 1:1:1 weighting lets the noise terms collapse the model into emitting
    # unit noise for every input; upweighting the clean term keeps both
    # objectives trainable.
    loss_weights: tuple[float, float, float] = (10.0, 1.0, 1.0)
    block_size: int = 13
    seed: int = 0
    checkpoint_every: int = 0  # epochs; 0 disables periodic checkpoints

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2:
            raise ConfigError("epochs >= 1 and batch_size >= 2 required")
        if not 0.0 < self.mix_ratio < 1.0:
            raise ConfigError(f"mix_ratio {self.mix_ratio} not in (0, 1)")


@dataclass
class TrainHistory:
    """Per-epoch averages of the three loss terms."""

    clean_loss: list[float] = field(default_factory=list)
    noise_mean_loss: list[float] = field(default_factory=list)
    noise_var_loss: list[float] = field(default_factory=list)
    total_loss: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def load_train_config(path) -> tuple[TrainConfig, NoiseOverlaySpec]:
    """Read a JSON training config with optional "train" and "noise" sections."""
    with open(path) as f:
        doc = json.load(f)
    tc = doc.get("train", {})
    ns = doc.get("noise", {})
    for key in ("loss_weights",):
        if key in tc:
            tc[key] = tuple(tc[key])
    for key in ("count_range", "size_range", "stretch_range"):
        if key in ns:
            ns[key] = tuple(ns[key])
    return TrainConfig(**tc), NoiseOverlaySpec(**ns)


def map_noise_to_pixels(t: np.ndarray) -> np.ndarray:
    """Standard-normal samples -> [0, 1] pixel values."""
    return np.clip(0.5 + 0.25 * t, 0.0, 1.0)


def unmap_pixels_to_noise(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`map_noise_to_pixels` on the unclipped range."""
    return (v - 0.5) / 0.25


def sample_noise_pixels(
    shape, distribution: str, rng: np.random.Generator, zoom: float = 1.0
) -> np.ndarray:
    """An (h, w, 3) noise pattern; ``zoom`` > 1 samples the field at a lower
    resolution and stretches it up bilinearly, producing coarser patterns."""
    h, w, c = shape
    bh = max(1, int(np.ceil(h / zoom)))
    bw = max(1, int(np.ceil(w / zoom)))
    if distribution == "normal":
        base = rng.standard_normal((bh, bw, c))
    else:
        base = rng.uniform(0.0, 1.0, size=(bh, bw, c))
    if (bh, bw) != (h, w):
        coords = np.meshgrid(
            np.linspace(0.0, bh - 1.0, h),
            np.linspace(0.0, bw - 1.0, w),
            np.arange(c),
            indexing="ij",
        )
        base = map_coordinates(base, coords, order=1, mode="nearest")
    if distribution == "normal":
        base = map_noise_to_pixels(base)
    return base


def synthesize_overlay(
    image: np.ndarray, spec: NoiseOverlaySpec, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Paste noise rectangles onto ``image``.

    Returns the composite and the exact binary (H, W) mask of overlaid pixels.
    """
    h, w, _ = image.shape
    side = min(h, w)
    composite = image.astype(np.float32).copy()
    mask = np.zeros((h, w), dtype=bool)
    count = int(rng.integers(spec.count_range[0], spec.count_range[1] + 1))
    for _ in range(count):
        frac = rng.uniform(*spec.size_range)
        stretch = rng.uniform(*spec.stretch_range)
        ph = max(1, int(round(frac * side * stretch)))
        pw = max(1, int(round(frac * side / stretch)))
        if ph > h or pw > w:
            raise ConfigError(
                f"overlay {ph}x{pw} larger than image {h}x{w}"
            )
        top = int(rng.integers(0, h - ph + 1))
        left = int(rng.integers(0, w - pw + 1))
        zoom = float(rng.uniform(*spec.zoom_range))
        pattern = sample_noise_pixels((ph, pw, 3), spec.distribution, rng, zoom)
        sigma = float(rng.uniform(*spec.blur_sigma_range))
        if sigma > 0.0:
            pattern = gaussian_filter(pattern, sigma=(sigma, sigma, 0))
        composite[top : top + ph, left : left + pw] = pattern.astype(np.float32)
        mask[top : top + ph, left : left + pw] = True
    return composite, mask


def destructive_loss(
    params: model.AEParams,
    clean_blocks: np.ndarray,
    noise_blocks: np.ndarray,
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> tuple[float, dict, list[np.ndarray]]:
    """Total loss, per-term values, and exact parameter gradients.

    ``clean_blocks`` and ``noise_blocks`` are (N, B, B, 3) batches; the noise
    batch must contain only blocks classified as noise (>= 50% overlaid).
    """
    if len(clean_blocks) == 0 or len(noise_blocks) == 0:
        raise TrainingError("both clean and noise batches must be non-empty")
    w1, w2, w3 = weights
    b = params.block_size

    xc, _ = model._to_chw(np.asarray(clean_blocks), b)
    xn, _ = model._to_chw(np.asarray(noise_blocks), b)

    rc, cache_c = model.forward_with_cache(params, xc)
    rn, cache_n = model.forward_with_cache(params, xn)

    n_c, elems = len(xc), xc[0].size
    n_n = len(xn)

    diff = rc - xc
    term1 = float(np.abs(diff).mean())
    d_rc = w1 * np.sign(diff) / diff.size

    means = rn.mean(axis=(1, 2, 3))
    varis = rn.var(axis=(1, 2, 3))
    term2 = float(np.abs(means).mean())
    term3 = float(np.abs(varis - 1.0).mean())

    sign_m = np.sign(means)[:, None, None, None]
    sign_v = np.sign(varis - 1.0)[:, None, None, None]
    centered = rn - means[:, None, None, None]
    d_rn = (w2 * sign_m / elems + w3 * sign_v * 2.0 * centered / elems) / n_n
    d_rn = d_rn.astype(rn.dtype)

    grads_c, _ = model.backward(params, cache_c, d_rc.astype(rc.dtype))
    grads_n, _ = model.backward(params, cache_n, d_rn)
    grads = [gc + gn for gc, gn in zip(grads_c, grads_n)]

    total = w1 * term1 + w2 * term2 + w3 * term3
    terms = dict(clean=term1, noise_mean=term2, noise_var=term3)
    return total, terms, grads


def _epoch_tiles(
    corpus: list[np.ndarray],
    spec: NoiseOverlaySpec,
    block_size: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Clean tiles from the originals and noise tiles (>= 50% overlaid
    pixels) from fresh noise composites."""
    clean, noise = [], []
    for img in corpus:
        grid = splitting.split(img, block_size)
        clean.append(grid.blocks)
        composite, mask = synthesize_overlay(img, spec, rng)
        cgrid = splitting.split(composite, block_size)
        mgrid = splitting.split(np.repeat(mask[:, :, None], 3, axis=2).astype(np.float32),
                                block_size)
        coverage = mgrid.blocks.mean(axis=(1, 2, 3))
        keep = coverage >= NOISE_BLOCK_COVERAGE
        if keep.any():
            noise.append(cgrid.blocks[keep])
    if not noise:
        raise TrainingError("no noise blocks synthesized; overlay spec too small")
    return (
        np.concatenate(clean).astype(np.float32),
        np.concatenate(noise).astype(np.float32),
    )


def train(
    corpus: list[np.ndarray],
    spec: NoiseOverlaySpec,
    cfg: TrainConfig,
    checkpoint_dir=None,
) -> tuple[model.AEParams, TrainHistory]:
    """Optimize the autoencoder on a clean-image corpus.

    Deterministic under a fixed (seed, corpus, config) triple: two runs
    produce bit-identical parameters.
    """
    if not corpus:
        raise TrainingError("empty training corpus")
    b = cfg.block_size
    for img in corpus:
        if img.shape[0] < b or img.shape[1] < b:
            raise TrainingError(f"corpus image {img.shape} smaller than block size {b}")

    params = model.init_params(cfg.seed, b)
    state = AdamState.zeros_like(params.param_arrays())
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()

    n_clean_per_batch = max(1, int(round(cfg.batch_size * cfg.mix_ratio)))
    n_noise_per_batch = max(1, cfg.batch_size - n_clean_per_batch)

    decay_epoch = int(cfg.lr_decay_at * cfg.epochs)
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate * (cfg.lr_decay_factor if epoch >= decay_epoch else 1.0)
        clean_tiles, noise_tiles = _epoch_tiles(corpus, spec, b, rng)
        rng.shuffle(clean_tiles)
        rng.shuffle(noise_tiles)
        n_batches = max(1, len(clean_tiles) // n_clean_per_batch)
        sums = np.zeros(4)
        for bi in range(n_batches):
            cb = clean_tiles[bi * n_clean_per_batch : (bi + 1) * n_clean_per_batch]
            idx = rng.integers(0, len(noise_tiles), size=n_noise_per_batch)
            nb = noise_tiles[idx]
            if len(cb) == 0:
                continue
            total, terms, grads = destructive_loss(params, cb, nb, cfg.loss_weights)
            if not np.isfinite(total):
                raise TrainingError(f"non-finite loss at epoch {epoch} batch {bi}")
            adam_step(
                params.param_arrays(), grads, state,
                lr=lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
            )
            sums += (terms["clean"], terms["noise_mean"], terms["noise_var"], total)
        avg = sums / n_batches
        history.clean_loss.append(float(avg[0]))
        history.noise_mean_loss.append(float(avg[1]))
        history.noise_var_loss.append(float(avg[2]))
        history.total_loss.append(float(avg[3]))
        if checkpoint_dir and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            model.save_checkpoint(
                params, f"{checkpoint_dir}/epoch{epoch + 1:04d}.nnae",
                seed=cfg.seed, train_config=asdict(cfg) | {"epoch": epoch + 1},
            )
    return params, history
