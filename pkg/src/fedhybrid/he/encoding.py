"""Canonical embedding between real slot vectors and ring polynomials.

A real polynomial ``m`` of degree < N is identified with its evaluations at the
primitive 2N-th roots of unity ``w**(5**i)``, ``i < N/2`` (the remaining roots
carry the complex conjugates). Both directions are one length-N FFT.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


class CanonicalEmbedding:
    def __init__(self, n: int):
        self.n = n
        self.slots = n // 2
        two_n = 2 * n
        j = np.arange(n)
        self._twist = np.exp(1j * np.pi * j / n)  # w**j with w = exp(i*pi/N)
        exps = np.empty(self.slots, dtype=np.int64)
        e = 1
        for i in range(self.slots):
            exps[i] = e
            e = e * 5 % two_n
        # evaluation at w**(2k+1) lands in position k of the FFT output
        self._slot_pos = (exps - 1) // 2
        self._conj_pos = (two_n - exps - 1) // 2

    def evaluate(self, coeffs) -> np.ndarray:
        """Slot values ``m(w**(5**i))`` of a real coefficient vector."""
        coeffs = np.asarray(coeffs, dtype=np.float64)
        evals = np.fft.ifft(coeffs * self._twist) * self.n
        return evals[self._slot_pos]

    def interpolate(self, slots) -> np.ndarray:
        """Real coefficients of the polynomial taking the given slot values."""
        values = np.zeros(self.slots, dtype=np.complex128)
        slots = np.asarray(slots)
        values[: slots.shape[0]] = slots
        evals = np.empty(self.n, dtype=np.complex128)
        evals[self._slot_pos] = values
        evals[self._conj_pos] = np.conj(values)
        coeffs = np.fft.fft(evals) / self.n / self._twist
        return coeffs.real


@lru_cache(maxsize=None)
def embedding(n: int) -> CanonicalEmbedding:
    return CanonicalEmbedding(n)
