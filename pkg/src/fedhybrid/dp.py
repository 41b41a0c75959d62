"""Client-side differential privacy: l2 clipping and Gaussian noise.

Noise is calibrated with the analytic Gaussian mechanism, i.e. the smallest
``sigma`` for which

    Phi(D/(2s) - eps*s/D) - exp(eps) * Phi(-D/(2s) - eps*s/D) <= delta

holds, where ``D`` is the l2 sensitivity. The classical bound
``D * sqrt(2 ln(1.25/delta)) / eps`` is used as the initial upper bracket.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

from .errors import CalibrationError, ContractError
from .model import as_param_vector
from .seeding import make_rng

_MAX_BISECTIONS = 200
_MAX_DOUBLINGS = 10
_LINEAR_RANGE = 8.0


def _log_phi(x: float) -> float:
    if x >= -_LINEAR_RANGE:
        return math.log(0.5 * math.erfc(-x / math.sqrt(2.0)))
    return float(log_ndtr(x))


def _phi(x: float) -> float:
    if x >= -_LINEAR_RANGE:
        return 0.5 * math.erfc(-x / math.sqrt(2.0))
    return math.exp(float(log_ndtr(x)))


def privacy_loss_delta(epsilon: float, sensitivity: float, sigma: float) -> float:
    """Tight delta achieved by Gaussian noise ``sigma`` at the given epsilon."""
    if sigma <= 0:
        return 1.0
    ratio = sensitivity / sigma
    a = ratio / 2.0 - epsilon / ratio
    b = -ratio / 2.0 - epsilon / ratio
    return _phi(a) - math.exp(epsilon + _log_phi(b))


def classical_sigma(epsilon: float, delta: float, sensitivity: float) -> float:
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def _check_budget(epsilon: float, delta: float, sensitivity: float) -> None:
    if not epsilon > 0:
        raise ContractError(f"epsilon must be > 0, got {epsilon}")
    if not 0 < delta < 1:
        raise ContractError(f"delta must lie in (0, 1), got {delta}")
    if not sensitivity > 0:
        raise ContractError(f"sensitivity must be > 0, got {sensitivity}")


def verify_dp_condition(
    epsilon: float, delta: float, sensitivity: float, sigma: float
) -> bool:
    _check_budget(epsilon, delta, sensitivity)
    return privacy_loss_delta(epsilon, sensitivity, sigma) <= delta


def calibrate_sigma(
    epsilon: float, delta: float, sensitivity: float, rel_tol: float = 1e-6
) -> float:
    """Smallest Gaussian noise scale giving (epsilon, delta)-DP.

    Returns the upper end of the final bisection bracket, so the result always
    satisfies :func:`verify_dp_condition`.
    """
    _check_budget(epsilon, delta, sensitivity)

    def ok(s: float) -> bool:
        return privacy_loss_delta(epsilon, sensitivity, s) <= delta

    lo = 1e-6 * sensitivity
    hi = classical_sigma(epsilon, delta, sensitivity)
    for _ in range(_MAX_DOUBLINGS):
        if ok(hi):
            break
        lo, hi = hi, 2.0 * hi
    else:
        if not ok(hi):
            raise CalibrationError("upper bracket never satisfied the DP condition")
    if ok(lo):
        return lo

    for _ in range(_MAX_BISECTIONS):
        if hi - lo <= rel_tol * hi:
            return hi
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    raise CalibrationError(
        f"sigma bisection did not converge in {_MAX_BISECTIONS} iterations"
    )


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float
    clip_norm: float
    sigma: float
    sensitivity: float

    @classmethod
    def calibrated(
        cls,
        epsilon: float,
        delta: float,
        clip_norm: float,
        adjacency: str = "add-remove",
    ) -> "PrivacyParams":
        """Build parameters with sigma derived from the budget.

        ``adjacency`` selects the sensitivity: ``"add-remove"`` uses the clip
        norm, ``"replace"`` uses twice the clip norm.
        """
        if not clip_norm > 0:
            raise ContractError(f"clip_norm must be > 0, got {clip_norm}")
        if adjacency == "add-remove":
            sensitivity = clip_norm
        elif adjacency == "replace":
            sensitivity = 2.0 * clip_norm
        else:
            raise ContractError(f"unknown adjacency {adjacency!r}")
        sigma = calibrate_sigma(epsilon, delta, sensitivity)
        return cls(epsilon, delta, clip_norm, sigma, sensitivity)

    @classmethod
    def disabled(cls) -> "PrivacyParams":
        """No clipping and no noise. Only for equivalence testing."""
        return cls(math.inf, 0.5, math.inf, 0.0, math.inf)


def clip(g, clip_norm: float) -> np.ndarray:
    """Scale ``g`` into the l2 ball of radius ``clip_norm``."""
    g = as_param_vector(g)
    if not clip_norm > 0:
        raise ContractError(f"clip_norm must be > 0, got {clip_norm}")
    norm = float(np.linalg.norm(g))
    if norm <= clip_norm:
        return g.copy()
    return g / (norm / clip_norm)


def add_noise(g, sigma: float, rng_seed) -> np.ndarray:
    g = as_param_vector(g)
    if sigma < 0:
        raise ContractError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return g.copy()
    rng = make_rng(rng_seed)
    return g + rng.normal(0.0, sigma, size=g.shape)


def dp_protect(g, params: PrivacyParams, rng_seed) -> np.ndarray:
    return add_noise(clip(g, params.clip_norm), params.sigma, rng_seed)
