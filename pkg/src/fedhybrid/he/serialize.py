"""Binary codec for ciphertexts and keys.

Layout (all little-endian)::

    magic "FHE1" | kind u8 | params fingerprint (16 bytes) | kind header | polys

Every polynomial is written limb by limb, each limb as a ``u64`` coefficient
count followed by that many ``u64`` coefficients. Secret keys are stored as
their residues modulo the first prime.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import ContractError
from .ckks import HeCiphertext, HeParams, PublicKey, SecretKey

MAGIC = b"FHE1"
KIND_CIPHERTEXT = 1
KIND_PUBLIC_KEY = 2
KIND_SECRET_KEY = 3

_PREFIX = struct.Struct("<4sB16s")
_CT_HEADER = struct.Struct("<dII")


def _write_poly(out: list, poly: np.ndarray) -> None:
    for limb in np.atleast_2d(poly):
        out.append(struct.pack("<Q", limb.shape[0]))
        out.append(limb.astype("<u8").tobytes())


def _read_poly(buf: memoryview, offset: int, limbs: int, params: HeParams):
    rows = []
    for _ in range(limbs):
        (length,) = struct.unpack_from("<Q", buf, offset)
        offset += 8
        if length != params.ring_degree:
            raise ContractError(f"limb length {length} != ring degree {params.ring_degree}")
        end = offset + 8 * length
        if end > len(buf):
            raise ContractError("truncated polynomial data")
        rows.append(np.frombuffer(buf[offset:end], dtype="<u8").astype(np.int64))
        offset = end
    return np.stack(rows), offset


def _prefix(kind: int, params: HeParams) -> bytes:
    return _PREFIX.pack(MAGIC, kind, params.fingerprint())


def _check_prefix(buf: memoryview, kind: int, params: HeParams) -> int:
    magic, got_kind, fp = _PREFIX.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ContractError("not a serialized HE object")
    if got_kind != kind:
        raise ContractError(f"expected object kind {kind}, found {got_kind}")
    if fp != params.fingerprint():
        raise ContractError("parameter fingerprint mismatch")
    return _PREFIX.size


def serialize_ciphertext(c: HeCiphertext) -> bytes:
    out = [
        _prefix(KIND_CIPHERTEXT, c.params),
        _CT_HEADER.pack(c.scale, c.slots_used, c.addition_count),
    ]
    _write_poly(out, c.c0)
    _write_poly(out, c.c1)
    return b"".join(out)


def deserialize_ciphertext(data: bytes, params: HeParams) -> HeCiphertext:
    buf = memoryview(data)
    offset = _check_prefix(buf, KIND_CIPHERTEXT, params)
    scale, slots_used, additions = _CT_HEADER.unpack_from(buf, offset)
    offset += _CT_HEADER.size
    limbs = len(params.coeff_moduli)
    c0, offset = _read_poly(buf, offset, limbs, params)
    c1, offset = _read_poly(buf, offset, limbs, params)
    if offset != len(buf):
        raise ContractError("trailing bytes after ciphertext")
    return HeCiphertext(params, c0, c1, scale, slots_used, additions)


def serialize_public_key(pk: PublicKey) -> bytes:
    out = [_prefix(KIND_PUBLIC_KEY, pk.params)]
    _write_poly(out, pk.b)
    _write_poly(out, pk.a)
    return b"".join(out)


def deserialize_public_key(data: bytes, params: HeParams) -> PublicKey:
    buf = memoryview(data)
    offset = _check_prefix(buf, KIND_PUBLIC_KEY, params)
    limbs = len(params.coeff_moduli)
    b, offset = _read_poly(buf, offset, limbs, params)
    a, offset = _read_poly(buf, offset, limbs, params)
    if offset != len(buf):
        raise ContractError("trailing bytes after public key")
    return PublicKey(params, b, a)


def serialize_secret_key(sk: SecretKey) -> bytes:
    """Key-escrow/debugging only; the protocol never ships secret keys."""
    q0 = sk.params.coeff_moduli[0]
    out = [_prefix(KIND_SECRET_KEY, sk.params)]
    _write_poly(out, np.mod(sk.coeffs, q0))
    return b"".join(out)


def deserialize_secret_key(data: bytes, params: HeParams) -> SecretKey:
    buf = memoryview(data)
    offset = _check_prefix(buf, KIND_SECRET_KEY, params)
    residues, offset = _read_poly(buf, offset, 1, params)
    if offset != len(buf):
        raise ContractError("trailing bytes after secret key")
    q0 = params.coeff_moduli[0]
    coeffs = residues[0]
    return SecretKey(params, np.where(coeffs > q0 // 2, coeffs - q0, coeffs))
