"""Noise-adaptive image denoising: noise-level estimation, attention-modulated
encoder/decoder with cross-modal token fusion, and a sigma-weighted objective."""

from .backbone import MIND, AblationFlags, ModelConfig, MindOutput, mind_forward
from .degrade import NoiseSpec, degrade
from .errors import (
    ConfigError,
    DatasetError,
    DimensionError,
    FormatError,
    MindError,
    ParameterError,
    SizeMismatchError,
    TrainingError,
)
from .estimator import MindDenoiser
from .evalkit import baseline_denoise, evaluate_run, paired_t_test, psnr, rmse, ssim
from .imagedata import read_image, write_image
from .naab import NAAB
from .nle import NoiseLevelEstimator, estimate_sigma_map
from .objective import LossWeightsConfig, lambda_weights, total_loss
from .trainer import RunConfig, load_model, save_model, train

__version__ = "0.1.0"

__all__ = [
    "MIND",
    "NAAB",
    "AblationFlags",
    "ConfigError",
    "DatasetError",
    "DimensionError",
    "FormatError",
    "LossWeightsConfig",
    "MindDenoiser",
    "MindError",
    "MindOutput",
    "ModelConfig",
    "NoiseLevelEstimator",
    "NoiseSpec",
    "ParameterError",
    "RunConfig",
    "SizeMismatchError",
    "TrainingError",
    "baseline_denoise",
    "degrade",
    "estimate_sigma_map",
    "evaluate_run",
    "lambda_weights",
    "load_model",
    "mind_forward",
    "paired_t_test",
    "psnr",
    "read_image",
    "rmse",
    "save_model",
    "ssim",
    "total_loss",
    "train",
    "write_image",
]
