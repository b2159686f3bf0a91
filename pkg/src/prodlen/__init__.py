"""Robust supervision for prompt-conditioned output-length prediction.

Heavy-tailed length generation, median and histogram labels from repeated
samples, a binned MLP predictor, evaluation metrics, and numerical checks of
the ridge-surrogate bound.
"""

from ._kernels import BACKEND, HAS_NUMBA
from .config import (
    ConfigError,
    ExperimentConfig,
    GeneratorConfig,
    TheoryConfig,
    TrainConfig,
    config_hash,
    load_config,
)
from .labelkit import BinGrid, make_bin_grid, sample_median
from .lengthdist import ConditionalLengthDist, PromptInstance, SamplePool, SurrogateNoiseModel, make_dataset, sample_lengths
from .metrics import bayes_median_oracle, evaluate, noise_radius
from .predictor import decode_median, predict_lengths, train
from .surrogate import beta_n, ridge_fit, uncertainty

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "HAS_NUMBA",
    "BinGrid",
    "ConditionalLengthDist",
    "ConfigError",
    "ExperimentConfig",
    "GeneratorConfig",
    "PromptInstance",
    "SamplePool",
    "SurrogateNoiseModel",
    "TheoryConfig",
    "TrainConfig",
    "bayes_median_oracle",
    "beta_n",
    "config_hash",
    "decode_median",
    "evaluate",
    "load_config",
    "make_bin_grid",
    "make_dataset",
    "noise_radius",
    "predict_lengths",
    "ridge_fit",
    "sample_lengths",
    "sample_median",
    "train",
    "uncertainty",
]
