"""Tabular missing-value imputation with joint between-feature and between-sample attention."""

__version__ = "0.1.0"

from .data import DataMatrix, load_csv, synthetic_dataset
from .missingness import MissingnessSpec, generate_mask
from .model import ModelConfig, TrainedImputer, fit_imputer, impute, train

__all__ = [
    "DataMatrix",
    "MissingnessSpec",
    "ModelConfig",
    "TrainedImputer",
    "fit_imputer",
    "generate_mask",
    "impute",
    "load_csv",
    "synthetic_dataset",
    "train",
]
