"""Arithmetic in Z_q[X]/(X^N + 1) on int64 numpy arrays.

Residues live in ``[0, q)`` with ``q < 2**61``. Products use a floating-point
quotient estimate followed by an exact wrap-around correction; float64
suffices for ``q < 2**50``. Wider moduli use Shoup's precomputed quotients
for transform twiddles and the 80-bit float type elsewhere.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..errors import ParameterError

_FLOAT64_LIMIT = 1 << 50
_MAX_MODULUS = 1 << 61
_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41)


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin, exact for n < 3.3e24."""
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def is_power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def find_ntt_primes(ring_degree: int, bit_sizes) -> tuple[int, ...]:
    """Distinct primes ``q = 1 (mod 2N)`` of exactly the requested bit lengths.

    Each search walks downward from ``2**bits``; primes already taken for an
    earlier (equal) bit size are skipped.
    """
    step = 2 * ring_degree
    chosen: list[int] = []
    for bits in bit_sizes:
        if not 20 <= bits <= 60:
            raise ParameterError(f"modulus bit size {bits} outside [20, 60]")
        top = 1 << bits
        candidate = top - (top % step) + 1
        if candidate >= top:
            candidate -= step
        floor = 1 << (bits - 1)
        while candidate >= floor:
            if candidate not in chosen and is_prime(candidate):
                chosen.append(candidate)
                break
            candidate -= step
        else:
            raise ParameterError(
                f"no {bits}-bit prime congruent to 1 mod {step} is available"
            )
    return tuple(chosen)


def mulmod(a: np.ndarray, b, q) -> np.ndarray:
    """Elementwise ``a * b mod q`` for residues in ``[0, q)``.

    ``q`` may be a scalar or an int64 array broadcastable against ``a``.
    """
    if not np.isscalar(q):
        q = np.asarray(q, dtype=np.int64)
    with np.errstate(over="ignore"):
        if np.max(q) < _FLOAT64_LIMIT:
            quo = np.floor(a.astype(np.float64) * b * (1.0 / q)).astype(np.int64)
        else:
            wide = np.longdouble
            quo = np.floor(
                a.astype(wide) * np.asarray(b).astype(wide) / wide(q)
            ).astype(np.int64)
        r = a * b - quo * q
    r += q & (r >> 63)
    r -= q
    r += q & (r >> 63)
    return r


def addmod(a: np.ndarray, b: np.ndarray, q) -> np.ndarray:
    r = a + b
    r -= q
    r += q & (r >> 63)
    return r


def submod(a: np.ndarray, b: np.ndarray, q) -> np.ndarray:
    r = a - b
    r += q & (r >> 63)
    return r


def _primitive_root_2n(n: int, q: int) -> int:
    exponent = (q - 1) // (2 * n)
    for x in range(2, 10_000):
        psi = pow(x, exponent, q)
        if pow(psi, n, q) == q - 1:
            return psi
    raise ParameterError(f"no primitive {2 * n}-th root of unity mod {q}")


def _bit_reverse(i: int, bits: int) -> int:
    return int(format(i, f"0{bits}b")[::-1], 2) if bits else 0


_LOW32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)


def _shoup_precompute(w: np.ndarray, q: int) -> np.ndarray:
    return np.array([(int(x) << 64) // q for x in np.ravel(w)], dtype=np.uint64).reshape(
        np.shape(w)
    )


def _mulmod_shoup(a: np.ndarray, w: np.ndarray, w_shoup: np.ndarray, q: np.uint64):
    """``a * w mod q`` on uint64 with ``w_shoup = floor(w * 2**64 / q)``.

    The high word of ``a * w_shoup`` is assembled from 32-bit partial products.
    """
    a0 = a & _LOW32
    a1 = a >> _SHIFT32
    b0 = w_shoup & _LOW32
    b1 = w_shoup >> _SHIFT32
    lo = a0 * b0
    mid1 = a1 * b0
    mid2 = a0 * b1
    carry = ((lo >> _SHIFT32) + (mid1 & _LOW32) + (mid2 & _LOW32)) >> _SHIFT32
    quo = a1 * b1 + (mid1 >> _SHIFT32) + (mid2 >> _SHIFT32) + carry
    r = a * w - quo * q
    return np.minimum(r, r - q)


def _mulmod_float(a: np.ndarray, w: np.ndarray, w_frac: np.ndarray, q: np.uint64):
    """``a * w mod q`` on uint64 for ``q < 2**50`` with ``w_frac = w / q``.

    The float quotient is off by at most one, so ``a*w + q - quo*q`` lies in
    ``[0, 3q)`` and two conditional subtractions finish the reduction.
    """
    quo = (a.astype(np.float64) * w_frac).astype(np.uint64)
    r = a * w + q - quo * q
    r = np.minimum(r, r - q)
    return np.minimum(r, r - q)


class RnsNtt:
    """Negacyclic transforms of length ``n`` for a stack of moduli at once.

    Arrays have shape ``(..., L, n)`` with one row per modulus, so every
    butterfly stage is a single vectorized operation across all limbs.
    Forward is Cooley-Tukey (natural order in, bit-reversed out), inverse is
    Gentleman-Sande; powers of the 2n-th roots are stored in bit-reversed order.
    """

    def __init__(self, n: int, moduli):
        if not is_power_of_two(n):
            raise ParameterError(f"ring degree {n} is not a power of two")
        moduli = tuple(int(q) for q in moduli)
        for q in moduli:
            if q >= _MAX_MODULUS or (q - 1) % (2 * n) != 0:
                raise ParameterError(f"modulus {q} is not NTT-compatible with N={n}")
        self.n = n
        self.moduli = moduli
        bits = n.bit_length() - 1
        brv = [_bit_reverse(i, bits) for i in range(n)]
        psi_rows, psi_inv_rows, n_inv = [], [], []
        for q in moduli:
            psi = _primitive_root_2n(n, q)
            psi_inv = pow(psi, q - 2, q)
            psi_rows.append([pow(psi, e, q) for e in brv])
            psi_inv_rows.append([pow(psi_inv, e, q) for e in brv])
            n_inv.append(pow(n, q - 2, q))
        self.psi = np.array(psi_rows, dtype=np.uint64)
        self.psi_inv = np.array(psi_inv_rows, dtype=np.uint64)
        self._q = np.array(moduli, dtype=np.uint64).reshape(-1, 1, 1)
        self._q_col = self._q.reshape(-1, 1)
        self._n_inv = np.array(n_inv, dtype=np.uint64).reshape(-1, 1)
        if max(moduli) < _FLOAT64_LIMIT:
            self._mul = _mulmod_float
            qf = np.array(moduli, dtype=np.float64).reshape(-1, 1)
            self._psi_aux = self.psi.astype(np.float64) / qf
            self._psi_inv_aux = self.psi_inv.astype(np.float64) / qf
            self._n_inv_aux = self._n_inv.astype(np.float64) / qf
        else:
            self._mul = _mulmod_shoup
            self._psi_aux = np.stack([_shoup_precompute(r, q) for r, q in zip(self.psi, moduli)])
            self._psi_inv_aux = np.stack(
                [_shoup_precompute(r, q) for r, q in zip(self.psi_inv, moduli)]
            )
            self._n_inv_aux = np.array(
                [(v << 64) // q for v, q in zip(n_inv, moduli)], dtype=np.uint64
            ).reshape(-1, 1)

    def _prepare(self, a) -> np.ndarray:
        a = np.array(a, dtype=np.int64, copy=True)
        if a.ndim < 2 or a.shape[-2:] != (len(self.moduli), self.n):
            raise ParameterError(
                f"expected trailing shape ({len(self.moduli)}, {self.n}), got {a.shape}"
            )
        return a.view(np.uint64)

    def forward(self, a: np.ndarray) -> np.ndarray:
        n, q, limbs = self.n, self._q, len(self.moduli)
        a = self._prepare(a)
        lead = a.shape[:-1]
        m = 1
        with np.errstate(over="ignore"):
            while m < n:
                half = n // (2 * m)
                view = a.reshape(*lead, m, 2, half)
                zeta = self.psi[:, m : 2 * m].reshape(limbs, m, 1)
                zeta_aux = self._psi_aux[:, m : 2 * m].reshape(limbs, m, 1)
                u = view[..., 0, :]
                t = self._mul(view[..., 1, :], zeta, zeta_aux, q)
                hi = u + (q - t)
                lo = u + t
                view[..., 1, :] = np.minimum(hi, hi - q)
                view[..., 0, :] = np.minimum(lo, lo - q)
                m *= 2
        return a.view(np.int64)

    def inverse(self, a: np.ndarray) -> np.ndarray:
        n, q, limbs = self.n, self._q, len(self.moduli)
        a = self._prepare(a)
        lead = a.shape[:-1]
        m = n // 2
        with np.errstate(over="ignore"):
            while m >= 1:
                half = n // (2 * m)
                view = a.reshape(*lead, m, 2, half)
                zeta = self.psi_inv[:, m : 2 * m].reshape(limbs, m, 1)
                zeta_aux = self._psi_inv_aux[:, m : 2 * m].reshape(limbs, m, 1)
                u = view[..., 0, :]
                v = view[..., 1, :]
                lo = u + v
                diff = u + (q - v)
                diff = np.minimum(diff, diff - q)
                view[..., 1, :] = self._mul(diff, zeta, zeta_aux, q)
                view[..., 0, :] = np.minimum(lo, lo - q)
                m //= 2
            out = self._mul(a, self._n_inv, self._n_inv_aux, self._q_col)
        return out.view(np.int64)


class NttTables:
    """Single-modulus transform; the last axis holds the coefficients."""

    def __init__(self, n: int, q: int):
        self.n = n
        self.q = int(q)
        self._rns = RnsNtt(n, (q,))
        self.psi = self._rns.psi[0]
        self.psi_inv = self._rns.psi_inv[0]

    def forward(self, a: np.ndarray) -> np.ndarray:
        return self._rns.forward(np.asarray(a)[..., None, :])[..., 0, :]

    def inverse(self, a: np.ndarray) -> np.ndarray:
        return self._rns.inverse(np.asarray(a)[..., None, :])[..., 0, :]


@lru_cache(maxsize=None)
def ntt_tables(n: int, q: int) -> NttTables:
    return NttTables(n, q)


@lru_cache(maxsize=None)
def rns_ntt(n: int, moduli: tuple[int, ...]) -> RnsNtt:
    return RnsNtt(n, moduli)


def negacyclic_mul(a, b, modulus: int) -> np.ndarray:
    """Product of two polynomials in Z_q[X]/(X^N + 1) via the NTT."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape != b.shape or a.ndim != 1:
        raise ParameterError("operands must be 1-D arrays of equal length")
    tables = ntt_tables(a.shape[0], int(modulus))
    return tables.inverse(mulmod(tables.forward(a), tables.forward(b), tables.q))
