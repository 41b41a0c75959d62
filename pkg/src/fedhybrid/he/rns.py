"""Residue number system over a fixed tuple of coprime moduli."""

from __future__ import annotations

from math import prod

import numpy as np

from .ring import mulmod

# the float estimate of x / Q is accurate to about L * 2**-52, so x itself is
# known to within Q * 2**-48; the fast lift is used only when that is far
# below the int64 range
_FAST_LIFT_MAX_Q = 1 << 109
_FAST_LIFT_MAX_X = float(1 << 62)


class RnsBasis:
    def __init__(self, moduli):
        self.moduli = tuple(int(q) for q in moduli)
        self.product = prod(self.moduli)
        self._punctured = [self.product // q for q in self.moduli]
        self._weights = [
            p * pow(p % q, -1, q) for p, q in zip(self._punctured, self.moduli)
        ]
        self._inv_punctured = [pow(p % q, -1, q) for p, q in zip(self._punctured, self.moduli)]
        self._punctured_lo = np.array(
            [p % (1 << 64) for p in self._punctured], dtype=np.uint64
        ).reshape(-1, 1)
        self._product_lo = np.uint64(self.product % (1 << 64))

    def __len__(self) -> int:
        return len(self.moduli)

    def column(self) -> np.ndarray:
        return np.array(self.moduli, dtype=np.int64).reshape(-1, 1)

    def to_rns(self, coeffs) -> np.ndarray:
        """Reduce integer coefficients (any size, any sign) to an (L, N) array."""
        arr = np.asarray(coeffs)
        if arr.dtype != object and np.issubdtype(arr.dtype, np.integer):
            return np.mod(arr.astype(np.int64)[None, :], self.column())
        ints = [int(c) for c in arr]
        return np.array([[c % q for c in ints] for q in self.moduli], dtype=np.int64)

    def reconstruct(self, residues: np.ndarray) -> np.ndarray:
        """CRT lift to Python integers in ``[0, Q)`` (object array)."""
        residues = np.asarray(residues, dtype=np.int64)
        acc = np.zeros(residues.shape[1], dtype=object)
        for row, weight in zip(residues, self._weights):
            acc = acc + row.astype(object) * weight
        return acc % self.product

    def reconstruct_balanced(self, residues: np.ndarray) -> np.ndarray:
        """CRT lift to the symmetric range ``(-Q/2, Q/2]``."""
        values = self.reconstruct(residues)
        half = self.product // 2
        return np.where(values > half, values - self.product, values)

    def reconstruct_float(self, residues: np.ndarray) -> np.ndarray:
        """Balanced CRT lift converted to float64.

        Uses ``x = sum(y_i * Q/q_i) - v * Q`` with ``y_i = r_i * (Q/q_i)^-1 mod q_i``
        and ``v = round(sum(y_i / q_i))``. The sum is formed modulo 2**64,
        which is exact whenever ``|x| < 2**63``; larger values fall back to
        Python integers.
        """
        residues = np.asarray(residues, dtype=np.int64)
        if self.product >= _FAST_LIFT_MAX_Q:
            return self._reconstruct_float_exact(residues)
        y = np.stack(
            [mulmod(r, inv, q) for r, inv, q in zip(residues, self._inv_punctured, self.moduli)]
        )
        frac = sum(row.astype(np.float64) / q for row, q in zip(y, self.moduli))
        v = np.rint(frac)
        estimate = (frac - v) * float(self.product)
        if np.max(np.abs(estimate), initial=0.0) >= _FAST_LIFT_MAX_X:
            return self._reconstruct_float_exact(residues)
        with np.errstate(over="ignore"):
            acc = (y.view(np.uint64) * self._punctured_lo).sum(axis=0, dtype=np.uint64)
            acc -= v.astype(np.uint64) * self._product_lo
        return acc.view(np.int64).astype(np.float64)

    def _reconstruct_float_exact(self, residues: np.ndarray) -> np.ndarray:
        return np.array([float(c) for c in self.reconstruct_balanced(residues)], dtype=np.float64)
