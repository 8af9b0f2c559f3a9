"""Operator learning with BelNet, vanilla BelNet and DeepONet on numpy."""

from .estimators import (
    BelNetRegressor,
    DeepONetRegressor,
    ExtrapolationWarning,
    VanillaBelNetRegressor,
    make_regressor,
)
from .experiments import ConfigError, ExperimentConfig, preset, reproduce
from .io import load_checkpoint, load_datasets, save_checkpoint, save_datasets
from .operators import BelNet, DeepONet, VanillaBelNet, build_model
from .sampling import OperatorDataset, OperatorSample, PatchSpec
from .training import DivergenceError, EvalReport, TrainConfig, relative_error, train

__version__ = "0.1.0"

__all__ = [
    "BelNet",
    "BelNetRegressor",
    "ConfigError",
    "DeepONet",
    "DeepONetRegressor",
    "DivergenceError",
    "EvalReport",
    "ExperimentConfig",
    "ExtrapolationWarning",
    "OperatorDataset",
    "OperatorSample",
    "PatchSpec",
    "TrainConfig",
    "VanillaBelNet",
    "VanillaBelNetRegressor",
    "build_model",
    "load_checkpoint",
    "load_datasets",
    "make_regressor",
    "preset",
    "relative_error",
    "reproduce",
    "save_checkpoint",
    "save_datasets",
    "train",
]
