"""Block-wise reconstruction-autoencoder defense that detects and removes
adversarial patches from object-detector inputs."""

from .masking import MaskPair, Thresholds
from .model import AEParams, init_params, load_checkpoint, save_checkpoint
from .pipeline import DefenseConfig, DefenseResult, defend, defend_batch
from .splitting import BlockGrid, block_errors, reassemble, split
from .training import NoiseOverlaySpec, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AEParams",
    "BlockGrid",
    "DefenseConfig",
    "DefenseResult",
    "MaskPair",
    "NoiseOverlaySpec",
    "Thresholds",
    "TrainConfig",
    "block_errors",
    "defend",
    "defend_batch",
    "init_params",
    "load_checkpoint",
    "reassemble",
    "save_checkpoint",
    "split",
    "train",
]
