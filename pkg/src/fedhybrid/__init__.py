"""Hybrid federated learning: homomorphic and differentially private client groups."""

from .dp import PrivacyParams, calibrate_sigma, clip, dp_protect, verify_dp_condition
from .errors import (
    CalibrationError,
    ConfigError,
    ContractError,
    EncodingError,
    FedHybridError,
    NoiseBudgetError,
    ParameterError,
)
from .model import Dataset, RegressionModel, gradient, loss, mse, predict
from .protocol import ClientMode, RunMode, TrainingConfig, run_training

__version__ = "0.1.0"

__all__ = [
    "CalibrationError",
    "ClientMode",
    "ConfigError",
    "ContractError",
    "Dataset",
    "EncodingError",
    "FedHybridError",
    "NoiseBudgetError",
    "ParameterError",
    "PrivacyParams",
    "RegressionModel",
    "RunMode",
    "TrainingConfig",
    "calibrate_sigma",
    "clip",
    "dp_protect",
    "gradient",
    "loss",
    "mse",
    "predict",
    "run_training",
    "verify_dp_condition",
]
