"""Additive-only CKKS over an RNS coefficient modulus.

Only what aggregation needs is provided: encoding, public-key encryption,
ciphertext addition and decryption. There is no multiplication, rescaling or
relinearisation, so every prime in ``coeff_moduli`` stays in the ciphertext
modulus for the lifetime of a ciphertext.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from ..errors import ContractError, EncodingError, NoiseBudgetError, ParameterError
from ..seeding import make_rng
from .encoding import embedding
from .ring import find_ntt_primes, is_power_of_two, is_prime, mulmod, rns_ntt
from .rns import RnsBasis

MAX_ENCODE_MAGNITUDE = 2.0**30
MIN_SCALE = 2.0**20


@dataclass(frozen=True)
class HeParams:
    ring_degree: int
    coeff_moduli: tuple[int, ...]
    scale: float
    error_stddev: float = 3.2
    max_additions: int = 64

    def __post_init__(self):
        object.__setattr__(self, "coeff_moduli", tuple(int(q) for q in self.coeff_moduli))
        n = self.ring_degree
        if not is_power_of_two(n) or n < 1024:
            raise ParameterError(f"ring degree must be a power of two >= 1024, got {n}")
        if not self.coeff_moduli:
            raise ParameterError("at least one coefficient modulus is required")
        if len(set(self.coeff_moduli)) != len(self.coeff_moduli):
            raise ParameterError("coefficient moduli must be distinct")
        for q in self.coeff_moduli:
            if q >= 1 << 61 or (q - 1) % (2 * n) or not is_prime(q):
                raise ParameterError(f"modulus {q} is not an NTT-friendly prime")
        if self.scale < MIN_SCALE:
            raise ParameterError(f"scale {self.scale} is below 2**20")
        if self.error_stddev <= 0 or self.max_additions < 1:
            raise ParameterError("error_stddev and max_additions must be positive")

    @property
    def slot_count(self) -> int:
        return self.ring_degree // 2

    @property
    def basis(self) -> RnsBasis:
        return _basis(self.coeff_moduli)

    def fingerprint(self) -> bytes:
        text = f"{self.ring_degree}|{','.join(map(str, self.coeff_moduli))}|{self.scale!r}"
        return hashlib.sha256(text.encode()).digest()[:16]


@lru_cache(maxsize=None)
def _basis(moduli: tuple[int, ...]) -> RnsBasis:
    return RnsBasis(moduli)


def gen_params(
    ring_degree: int,
    coeff_modulus_bits,
    scale: float,
    *,
    error_stddev: float = 3.2,
    max_additions: int = 64,
) -> HeParams:
    if not is_power_of_two(ring_degree):
        raise ParameterError(f"ring degree {ring_degree} is not a power of two")
    moduli = find_ntt_primes(ring_degree, list(coeff_modulus_bits))
    return HeParams(ring_degree, moduli, float(scale), error_stddev, max_additions)


def paper_params() -> HeParams:
    """Ring degree 8192 x 2, moduli [40, 20, 40] bits, scale 2**40."""
    return gen_params(16384, [40, 20, 40], 2.0**40)


def desk_params() -> HeParams:
    return gen_params(4096, [40, 40], 2.0**40)


def _ntt(params: HeParams, poly: np.ndarray) -> np.ndarray:
    """Forward NTT of an (..., L, N) residue array."""
    return rns_ntt(params.ring_degree, params.coeff_moduli).forward(poly)


def _intt(params: HeParams, poly: np.ndarray) -> np.ndarray:
    return rns_ntt(params.ring_degree, params.coeff_moduli).inverse(poly)


def _pointwise(params: HeParams, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.broadcast_arrays(a, b)
    if max(params.coeff_moduli) < 2**50:
        return mulmod(a, b, params.basis.column())
    out = np.empty(a.shape, dtype=np.int64)
    for i, q in enumerate(params.coeff_moduli):
        out[..., i, :] = mulmod(a[..., i, :], b[..., i, :], q)
    return out


def _add(params: HeParams, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    q = params.basis.column()
    r = a + b
    return np.where(r >= q, r - q, r)


def _sample_ternary(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(-1, 2, size=n, dtype=np.int64)


def _sample_error(rng: np.random.Generator, n: int, stddev: float) -> np.ndarray:
    """Rounded Gaussian truncated at six standard deviations."""
    bound = 6.0 * stddev
    e = rng.normal(0.0, stddev, size=n)
    bad = np.abs(e) > bound
    while bad.any():
        e[bad] = rng.normal(0.0, stddev, size=int(bad.sum()))
        bad = np.abs(e) > bound
    return np.rint(e).astype(np.int64)


def _sample_uniform(rng: np.random.Generator, params: HeParams) -> np.ndarray:
    return np.stack(
        [rng.integers(0, q, size=params.ring_degree, dtype=np.int64) for q in params.coeff_moduli]
    )


def _small_to_rns(params: HeParams, small: np.ndarray) -> np.ndarray:
    return np.mod(small[None, :], params.basis.column())


@dataclass(frozen=True, eq=False)
class SecretKey:
    params: HeParams
    coeffs: np.ndarray  # ternary, signed

    @cached_property
    def ntt(self) -> np.ndarray:
        return _ntt(self.params, _small_to_rns(self.params, self.coeffs))

    def __eq__(self, other):
        return (
            isinstance(other, SecretKey)
            and self.params == other.params
            and np.array_equal(self.coeffs, other.coeffs)
        )


@dataclass(frozen=True, eq=False)
class PublicKey:
    params: HeParams
    b: np.ndarray  # (L, N) residues, b = -a*s + e
    a: np.ndarray

    @cached_property
    def ntt(self) -> np.ndarray:
        return _ntt(self.params, np.stack([self.b, self.a]))

    def __eq__(self, other):
        return (
            isinstance(other, PublicKey)
            and self.params == other.params
            and np.array_equal(self.b, other.b)
            and np.array_equal(self.a, other.a)
        )


@dataclass(frozen=True)
class KeyPair:
    secret: SecretKey
    public: PublicKey


def keygen(params: HeParams, rng_seed) -> KeyPair:
    rng = make_rng(rng_seed)
    n = params.ring_degree
    s = _sample_ternary(rng, n)
    secret = SecretKey(params, s)
    a = _sample_uniform(rng, params)
    e = _sample_error(rng, n, params.error_stddev)
    a_s = _intt(params, _pointwise(params, _ntt(params, a), secret.ntt))
    q = params.basis.column()
    b = _add(params, np.mod(-a_s, q), _small_to_rns(params, e))
    return KeyPair(secret, PublicKey(params, b, a))


@dataclass(frozen=True, eq=False)
class HePlaintext:
    poly: np.ndarray  # (L, N) residues
    scale: float
    slots_used: int

    def __eq__(self, other):
        return (
            isinstance(other, HePlaintext)
            and self.scale == other.scale
            and self.slots_used == other.slots_used
            and np.array_equal(self.poly, other.poly)
        )


@dataclass(frozen=True, eq=False)
class HeCiphertext:
    params: HeParams
    c0: np.ndarray
    c1: np.ndarray
    scale: float
    slots_used: int
    addition_count: int = 0

    def __eq__(self, other):
        return (
            isinstance(other, HeCiphertext)
            and self.params == other.params
            and self.scale == other.scale
            and self.slots_used == other.slots_used
            and self.addition_count == other.addition_count
            and np.array_equal(self.c0, other.c0)
            and np.array_equal(self.c1, other.c1)
        )


def encode(v, params: HeParams) -> HePlaintext:
    values = np.asarray(v, dtype=np.float64).ravel()
    if values.shape[0] > params.slot_count:
        raise EncodingError(
            f"{values.shape[0]} values exceed the {params.slot_count} available slots"
        )
    if not np.all(np.isfinite(values)):
        raise EncodingError("cannot encode non-finite values")
    if values.size and np.max(np.abs(values)) > MAX_ENCODE_MAGNITUDE:
        raise EncodingError("values exceed the 2**30 encoding headroom")
    coeffs = np.rint(embedding(params.ring_degree).interpolate(values) * params.scale)
    peak = float(np.max(np.abs(coeffs))) if coeffs.size else 0.0
    if peak >= params.basis.product / 2:
        raise EncodingError("scaled coefficients overflow the coefficient modulus")
    if peak < 2.0**62:
        residues = params.basis.to_rns(coeffs.astype(np.int64))
    else:
        residues = params.basis.to_rns(np.array([int(c) for c in coeffs], dtype=object))
    return HePlaintext(residues, params.scale, int(values.shape[0]))


def decode(p: HePlaintext, params: HeParams) -> np.ndarray:
    real = params.basis.reconstruct_float(p.poly) / p.scale
    slots = embedding(params.ring_degree).evaluate(real)
    return slots.real[: p.slots_used].copy()


def encrypt(p: HePlaintext, pk: PublicKey, params: HeParams, rng_seed) -> HeCiphertext:
    if pk.params != params or p.poly.shape != (len(params.coeff_moduli), params.ring_degree):
        raise ContractError("plaintext, key and parameters do not match")
    rng = make_rng(rng_seed)
    n = params.ring_degree
    v = _small_to_rns(params, _sample_ternary(rng, n))
    e0 = _small_to_rns(params, _sample_error(rng, n, params.error_stddev))
    e1 = _small_to_rns(params, _sample_error(rng, n, params.error_stddev))
    v_ntt = _ntt(params, v)
    prod = _intt(params, _pointwise(params, pk.ntt, v_ntt[None]))
    c0 = _add(params, _add(params, prod[0], e0), p.poly)
    c1 = _add(params, prod[1], e1)
    return HeCiphertext(params, c0, c1, p.scale, p.slots_used, 0)


def decrypt(c: HeCiphertext, sk: SecretKey, params: HeParams) -> HePlaintext:
    if c.params != params or sk.params != params:
        raise ContractError("ciphertext, key and parameters do not match")
    c1_s = _intt(params, _pointwise(params, _ntt(params, c.c1), sk.ntt))
    return HePlaintext(_add(params, c.c0, c1_s), c.scale, c.slots_used)


def add_cipher(a: HeCiphertext, b: HeCiphertext) -> HeCiphertext:
    if a.params != b.params:
        raise ContractError("cannot add ciphertexts under different parameters")
    if a.scale != b.scale or a.slots_used != b.slots_used:
        raise ContractError(
            f"ciphertext layouts differ: scale {a.scale} vs {b.scale}, "
            f"slots {a.slots_used} vs {b.slots_used}"
        )
    count = a.addition_count + b.addition_count + 1
    if count > a.params.max_additions:
        raise NoiseBudgetError(
            f"{count} additions exceed the configured maximum {a.params.max_additions}"
        )
    params = a.params
    return HeCiphertext(
        params,
        _add(params, a.c0, b.c0),
        _add(params, a.c1, b.c1),
        a.scale,
        a.slots_used,
        count,
    )


def pack_gradient(g, params: HeParams) -> list[HePlaintext]:
    """Split a flat vector into slot-sized chunks and encode each one."""
    g = np.asarray(g, dtype=np.float64).ravel()
    slots = params.slot_count
    n_chunks = max(1, math.ceil(g.shape[0] / slots))
    return [encode(g[i * slots : (i + 1) * slots], params) for i in range(n_chunks)]


def unpack_gradient(plaintexts, params: HeParams) -> np.ndarray:
    return np.concatenate([decode(p, params) for p in plaintexts])
