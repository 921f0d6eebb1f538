"""Learned lossy image codec: convolutional VAE, factorized prior and range coder."""

from .codec import compress_array, compress_file, decompress_array, decompress_file, evaluate, reconstruct
from .entropy import FactorizedPrior, freeze_cmf
from .io.checkpoint import load_checkpoint, save_checkpoint
from .model import CodecModel
from .training import TrainConfig, sweep, train
from .vae import ArchitectureSpec

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec",
    "CodecModel",
    "FactorizedPrior",
    "TrainConfig",
    "compress_array",
    "compress_file",
    "decompress_array",
    "decompress_file",
    "evaluate",
    "freeze_cmf",
    "load_checkpoint",
    "reconstruct",
    "save_checkpoint",
    "sweep",
    "train",
]
