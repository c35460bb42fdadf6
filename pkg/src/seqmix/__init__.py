"""Gaussian mixtures with sequentially appearing clusters."""

from .dataset import PreprocessConfig, StreamPreprocessor, TimestampedDataset, load_dataset
from .em import FitConfig, FitReport, OnsetPrior, fit
from .estimator import GMMSeq
from .model import GmmSeqModel, SigmoidParams, observed_loglik, proportions
from .selection import sweep_k

__version__ = "0.1.0"

__all__ = [
    "FitConfig",
    "FitReport",
    "GMMSeq",
    "GmmSeqModel",
    "OnsetPrior",
    "PreprocessConfig",
    "SigmoidParams",
    "StreamPreprocessor",
    "TimestampedDataset",
    "fit",
    "load_dataset",
    "observed_loglik",
    "proportions",
    "sweep_k",
]
