"""Additive CKKS over an RNS/NTT polynomial ring, plus aggregation backends."""

from .backends import AggregationCipherBackend, CkksLite, ExactMock
from .ckks import (
    HeCiphertext,
    HeParams,
    HePlaintext,
    KeyPair,
    PublicKey,
    SecretKey,
    add_cipher,
    decode,
    decrypt,
    desk_params,
    encode,
    encrypt,
    gen_params,
    keygen,
    paper_params,
)
from .ring import find_ntt_primes, negacyclic_mul

__all__ = [
    "AggregationCipherBackend",
    "CkksLite",
    "ExactMock",
    "HeCiphertext",
    "HeParams",
    "HePlaintext",
    "KeyPair",
    "PublicKey",
    "SecretKey",
    "add_cipher",
    "decode",
    "decrypt",
    "desk_params",
    "encode",
    "encrypt",
    "find_ntt_primes",
    "gen_params",
    "keygen",
    "negacyclic_mul",
    "paper_params",
]
