class FedHybridError(Exception):
    """Base class for errors raised by this package."""


class ContractError(FedHybridError, ValueError):
    """An operation was called with inputs that violate its preconditions."""


class ParameterError(FedHybridError, ValueError):
    """Invalid homomorphic-encryption parameters."""


class EncodingError(FedHybridError, ValueError):
    """A vector cannot be encoded without overflowing the coefficient modulus."""


class NoiseBudgetError(FedHybridError):
    """A ciphertext absorbed more additions than its parameters allow."""


class CalibrationError(FedHybridError, RuntimeError):
    """Noise calibration failed to converge."""


class ConfigError(FedHybridError, ValueError):
    """Experiment configuration is malformed; message names the field path."""
