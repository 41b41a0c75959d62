"""Linear regression task: parameters, forward pass, MSE loss and SGD.

Parameter vectors are plain 1-D float64 numpy arrays. A model's weight vector
is laid out as the row-major ``(n_targets, n_features)`` matrix followed by the
``n_targets`` bias entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


def as_param_vector(values, dim: int | None = None) -> np.ndarray:
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1:
        raise ContractError(f"parameter vector must be 1-D, got shape {vec.shape}")
    if dim is not None and vec.shape[0] != dim:
        raise ContractError(f"expected dimension {dim}, got {vec.shape[0]}")
    if not np.all(np.isfinite(vec)):
        raise ContractError("parameter vector contains non-finite entries")
    return vec


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.targets, dtype=np.float64)
        if x.ndim != 2 or y.ndim != 2:
            raise ContractError("inputs and targets must be 2-D (samples, dims)")
        if x.shape[0] != y.shape[0]:
            raise ContractError(
                f"inputs have {x.shape[0]} samples but targets have {y.shape[0]}"
            )
        if x.shape[0] == 0:
            raise ContractError("dataset must contain at least one sample")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ContractError("dataset contains non-finite values")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    @property
    def sample_count(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_features(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_targets(self) -> int:
        return self.targets.shape[1]

    def subset(self, index) -> "Dataset":
        return Dataset(self.inputs[index], self.targets[index])

    @staticmethod
    def concat(parts) -> "Dataset":
        parts = list(parts)
        if not parts:
            raise ContractError("cannot concatenate zero datasets")
        return Dataset(
            np.concatenate([p.inputs for p in parts]),
            np.concatenate([p.targets for p in parts]),
        )


def param_count(n_features: int, n_targets: int) -> int:
    return n_targets * n_features + n_targets


@dataclass(frozen=True)
class RegressionModel:
    """Affine multi-output model ``y = A x + b`` over a flat weight vector."""

    weights: np.ndarray
    n_features: int
    n_targets: int
    _shape: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_features < 1 or self.n_targets < 1:
            raise ContractError("n_features and n_targets must be positive")
        dim = param_count(self.n_features, self.n_targets)
        object.__setattr__(self, "weights", as_param_vector(self.weights, dim))
        object.__setattr__(self, "_shape", (self.n_targets, self.n_features))

    @classmethod
    def zeros(cls, n_features: int, n_targets: int) -> "RegressionModel":
        return cls(np.zeros(param_count(n_features, n_targets)), n_features, n_targets)

    @classmethod
    def from_parts(cls, matrix, bias) -> "RegressionModel":
        matrix = np.asarray(matrix, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        n_targets, n_features = matrix.shape
        if bias.shape != (n_targets,):
            raise ContractError(f"bias must have shape ({n_targets},)")
        return cls(np.concatenate([matrix.ravel(), bias]), n_features, n_targets)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        split = self.n_targets * self.n_features
        return self.weights[:split].reshape(self._shape)

    @property
    def bias(self) -> np.ndarray:
        return self.weights[self.n_targets * self.n_features :]

    def with_weights(self, weights) -> "RegressionModel":
        return RegressionModel(weights, self.n_features, self.n_targets)

    def _check_data(self, data: Dataset) -> None:
        if data.n_features != self.n_features or data.n_targets != self.n_targets:
            raise ContractError(
                f"dataset dims ({data.n_features}, {data.n_targets}) do not match "
                f"model dims ({self.n_features}, {self.n_targets})"
            )


def predict(model: RegressionModel, x) -> np.ndarray:
    """Forward pass for one feature vector or a ``(samples, features)`` batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.n_features or x.ndim > 2:
        raise ContractError(
            f"expected feature length {model.n_features}, got shape {x.shape}"
        )
    return x @ model.matrix.T + model.bias


def mse(predictions, targets) -> float:
    """Mean over samples and output dimensions of the squared residual."""
    pred = np.asarray(predictions, dtype=np.float64)
    true = np.asarray(targets, dtype=np.float64)
    if pred.ndim == 1:
        pred = pred[:, None]
    if true.ndim == 1:
        true = true[:, None]
    if pred.size == 0 or true.size == 0:
        raise ContractError("mse of an empty set is undefined")
    if pred.shape != true.shape:
        raise ContractError(f"shape mismatch: {pred.shape} vs {true.shape}")
    return float(np.mean((true - pred) ** 2))


def loss(model: RegressionModel, data: Dataset) -> float:
    model._check_data(data)
    return mse(predict(model, data.inputs), data.targets)


def gradient(model: RegressionModel, batch: Dataset) -> np.ndarray:
    """Gradient of the batch MSE with respect to the flat weight vector."""
    model._check_data(batch)
    if batch.sample_count < 1:
        raise ContractError("gradient needs at least one sample")
    n, d = batch.sample_count, model.n_targets
    residual = predict(model, batch.inputs) - batch.targets  # (n, D)
    coef = 2.0 / (n * d)
    grad_matrix = coef * residual.T @ batch.inputs
    grad_bias = coef * residual.sum(axis=0)
    return np.concatenate([grad_matrix.ravel(), grad_bias])


def sgd_step(weights, grad, eta: float) -> np.ndarray:
    w = as_param_vector(weights)
    g = as_param_vector(grad, w.shape[0])
    if not eta > 0:
        raise ContractError(f"learning rate must be positive, got {eta}")
    return w - eta * g


def mean_target_bias_init(model: RegressionModel, train: Dataset) -> RegressionModel:
    """Zero the weight matrix and set the bias to the per-target training mean."""
    model._check_data(train)
    if train.sample_count == 0:
        raise ContractError("bias initialisation needs a non-empty dataset")
    matrix = np.zeros((model.n_targets, model.n_features))
    return RegressionModel.from_parts(matrix, train.targets.mean(axis=0))
