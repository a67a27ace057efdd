"""Attention-residual convolutional denoiser (ARCNN, and FARCNN when trained blind)."""

from .corruption import NoiseSpec, gaussian_corrupt, poisson_corrupt, sample_level
from .dataio import DatasetManifest, dihedral, extract_patch, load_manifest, make_batch, read_pgm, write_pgm
from .evaluation import evaluate, export_attention_heatmaps, psnr
from .model import (
    Model,
    ModelConfig,
    attention_weights,
    build_model,
    denoise_image,
    denoise_patch,
    forward_taps,
    noise_expectation,
    parameter_count,
)
from .nn_layers import Mode
from .tensor_core import ConvParams, conv2d_backward, conv2d_forward, finite_diff_grad
from .training import load_checkpoint, masked_loss, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "ConvParams", "DatasetManifest", "Mode", "Model", "ModelConfig", "NoiseSpec",
    "attention_weights", "build_model", "conv2d_backward", "conv2d_forward", "denoise_image",
    "denoise_patch", "dihedral", "evaluate", "export_attention_heatmaps", "extract_patch",
    "finite_diff_grad", "forward_taps", "gaussian_corrupt", "load_checkpoint", "load_manifest",
    "make_batch", "masked_loss", "noise_expectation", "parameter_count", "poisson_corrupt", "psnr",
    "read_pgm", "sample_level", "save_checkpoint", "train", "write_pgm",
]
